#include "cipherpipe/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <fstream>
#include <set>

#include "cipherpipe/alphabet.hpp"
#include "cipherpipe/eval_metrics.hpp"

namespace cipherpipe {
namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& what) {
  if (!j.is_object()) throw Error(what + " must be a JSON object", "config");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw Error("unknown key '" + key + "' in " + what, "config");
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void read_path(const nlohmann::json& j, const char* key, std::filesystem::path& field) {
  if (j.contains(key)) field = j.at(key).get<std::string>();
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j, int indent = -1) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'", "output");
  out << j.dump(indent) << '\n';
}

void require_file(const std::filesystem::path& p, const char* what) {
  if (!p.empty() && !std::filesystem::is_regular_file(p)) {
    throw Error(std::string(what) + " '" + p.string() + "' does not exist", "config");
  }
}

SymbolSequence read_gold_symbols(const std::filesystem::path& path) {
  if (path.extension() == ".json") {
    const auto t = read_transcription(path);
    SymbolSequence s;
    for (int k = 0; k < t.K; ++k) s.types.push_back("g" + std::to_string(k));
    s.ids = t.ids;
    return s;
  }
  return parse_symbols(read_text_file(path));
}

class StageClock {
 public:
  explicit StageClock(nlohmann::json& sink) : sink_(sink) {}
  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_[stage] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  nlohmann::json& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

void PipelineConfig::validate() const {
  require_file(page, "page image");
  require_file(manifest, "manifest");
  require_file(features, "feature file");
  require_file(transcription, "transcription");
  require_file(gold_plaintext, "gold plaintext");
  require_file(gold_transcription, "gold transcription");
  require_file(gold_manifest, "gold manifest");
  require_file(lm, "LM file");
  require_file(alphabet, "alphabet file");
  for (const auto& c : lm_corpus) require_file(c, "LM corpus file");
  if (transcription.empty()) {
    if (page.empty() && extractor != "external") {
      throw Error("config needs a page image, a transcription or external features", "config");
    }
    if (extractor == "external" && features.empty()) {
      throw Error("extractor 'external' needs a feature file", "config");
    }
    if (extractor != "simmat" && extractor != "rawpixel" && extractor != "external") {
      throw Error("unknown extractor '" + extractor + "'", "config");
    }
    if (K < 1) throw Error("K must be >= 1 when clustering", "config");
  }
  if (mode == DecipherMode::two_stage && !transcription.empty()) {
    throw Error("2-stage decipherment needs features, not a ready transcription", "config");
  }
  if (lm.empty() && lm_corpus.empty()) throw Error("config needs an LM or an LM corpus", "config");
  if (lm_order != 2 && lm_order != 3) throw Error("lm order must be 2 or 3", "config");
  if (channel_restarts < 1 || gmm_restarts < 1 || lmgmm_restarts < 1) {
    throw Error("restart counts must be >= 1", "config");
  }
  if (bigram_seed_restarts < 0) throw Error("bigram_seed_restarts must be >= 0", "config");
  if (bigram_seed_restarts > 0 && lm_corpus.empty()) {
    throw Error("bigram seeding needs an LM corpus", "config");
  }
  if (pca_dims < 0) throw Error("pca_dims must be >= 0", "config");
  if (covariance != "auto") CovarianceSpec::parse(covariance);
  CovarianceSpec::parse(lmgmm_covariance);
  lmgmm_variant_from_string(lmgmm_variant);
  segmentation.validate();
}

nlohmann::json to_json(const PipelineConfig& c) {
  std::vector<std::string> corpus;
  for (const auto& p : c.lm_corpus) corpus.push_back(p.string());
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir.string()},
      {"input",
       {{"page", c.page.string()},
        {"threshold", c.threshold},
        {"manifest", c.manifest.string()},
        {"features", c.features.string()},
        {"transcription", c.transcription.string()},
        {"gold_plaintext", c.gold_plaintext.string()},
        {"gold_transcription", c.gold_transcription.string()},
        {"gold_manifest", c.gold_manifest.string()}}},
      {"segmentation", to_json(c.segmentation)},
      {"features", {{"extractor", c.extractor}, {"rawpixel_block", c.rawpixel_block},
                    {"pca_dims", c.pca_dims}}},
      {"cluster", {{"K", c.K}, {"covariance", c.covariance}, {"restarts", c.gmm_restarts},
                   {"max_iters", c.gmm_max_iters}, {"tol", c.gmm_tol}}},
      {"lm", {{"path", c.lm.string()}, {"corpus", corpus}, {"alphabet", c.alphabet.string()},
              {"order", c.lm_order}, {"delta", c.lm_delta}}},
      {"decipher",
       {{"mode", c.mode == DecipherMode::three_stage ? "3stage" : "2stage"},
        {"restarts", c.channel_restarts},
        {"max_iters", c.channel_max_iters},
        {"tol", c.channel_tol},
        {"train_exponent", c.train_exponent},
        {"decode_exponent", c.decode_exponent},
        {"init_concentration", c.init_concentration},
        {"bigram_seed_restarts", c.bigram_seed_restarts}}},
      {"lmgmm",
       {{"variant", c.lmgmm_variant},
        {"lm_exponent", c.lmgmm_exponent},
        {"restarts", c.lmgmm_restarts},
        {"max_iters", c.lmgmm_max_iters},
        {"tol", c.lmgmm_tol},
        {"noise_scale", c.lmgmm_noise},
        {"covariance", c.lmgmm_covariance}}}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"seed", "out_dir", "input", "segmentation", "features", "cluster", "lm",
                 "decipher", "lmgmm"},
             "pipeline config");
  PipelineConfig c;
  read_opt(j, "seed", c.seed);
  read_path(j, "out_dir", c.out_dir);
  if (j.contains("input")) {
    const auto& in = j.at("input");
    check_keys(in, {"page", "threshold", "manifest", "features", "transcription",
                    "gold_plaintext", "gold_transcription", "gold_manifest"},
               "input");
    read_path(in, "page", c.page);
    read_opt(in, "threshold", c.threshold);
    read_path(in, "manifest", c.manifest);
    read_path(in, "features", c.features);
    read_path(in, "transcription", c.transcription);
    read_path(in, "gold_plaintext", c.gold_plaintext);
    read_path(in, "gold_transcription", c.gold_transcription);
    read_path(in, "gold_manifest", c.gold_manifest);
  }
  if (j.contains("segmentation")) {
    c.segmentation = segmentation_params_from_json(j.at("segmentation"));
  }
  if (j.contains("features")) {
    const auto& f = j.at("features");
    check_keys(f, {"extractor", "rawpixel_block", "pca_dims"}, "features");
    read_opt(f, "extractor", c.extractor);
    read_opt(f, "rawpixel_block", c.rawpixel_block);
    read_opt(f, "pca_dims", c.pca_dims);
  }
  if (j.contains("cluster")) {
    const auto& g = j.at("cluster");
    check_keys(g, {"K", "covariance", "restarts", "max_iters", "tol"}, "cluster");
    read_opt(g, "K", c.K);
    read_opt(g, "covariance", c.covariance);
    read_opt(g, "restarts", c.gmm_restarts);
    read_opt(g, "max_iters", c.gmm_max_iters);
    read_opt(g, "tol", c.gmm_tol);
  }
  if (j.contains("lm")) {
    const auto& l = j.at("lm");
    check_keys(l, {"path", "corpus", "alphabet", "order", "delta"}, "lm");
    read_path(l, "path", c.lm);
    if (l.contains("corpus")) {
      for (const auto& p : l.at("corpus")) c.lm_corpus.emplace_back(p.get<std::string>());
    }
    read_path(l, "alphabet", c.alphabet);
    read_opt(l, "order", c.lm_order);
    read_opt(l, "delta", c.lm_delta);
  }
  if (j.contains("decipher")) {
    const auto& d = j.at("decipher");
    check_keys(d, {"mode", "restarts", "max_iters", "tol", "train_exponent", "decode_exponent",
                   "init_concentration", "bigram_seed_restarts"},
               "decipher");
    if (d.contains("mode")) {
      const auto m = d.at("mode").get<std::string>();
      if (m == "3stage") {
        c.mode = DecipherMode::three_stage;
      } else if (m == "2stage") {
        c.mode = DecipherMode::two_stage;
      } else {
        throw Error("decipher mode must be 3stage or 2stage", "config");
      }
    }
    read_opt(d, "restarts", c.channel_restarts);
    read_opt(d, "max_iters", c.channel_max_iters);
    read_opt(d, "tol", c.channel_tol);
    read_opt(d, "train_exponent", c.train_exponent);
    read_opt(d, "decode_exponent", c.decode_exponent);
    read_opt(d, "init_concentration", c.init_concentration);
    read_opt(d, "bigram_seed_restarts", c.bigram_seed_restarts);
  }
  if (j.contains("lmgmm")) {
    const auto& m = j.at("lmgmm");
    check_keys(m, {"variant", "lm_exponent", "restarts", "max_iters", "tol", "noise_scale",
                   "covariance"},
               "lmgmm");
    read_opt(m, "variant", c.lmgmm_variant);
    read_opt(m, "lm_exponent", c.lmgmm_exponent);
    read_opt(m, "restarts", c.lmgmm_restarts);
    read_opt(m, "max_iters", c.lmgmm_max_iters);
    read_opt(m, "tol", c.lmgmm_tol);
    read_opt(m, "noise_scale", c.lmgmm_noise);
    read_opt(m, "covariance", c.lmgmm_covariance);
  }
  return c;
}

PipelineConfig read_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config '" + path.string() + "'", "config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config '" + path.string() + "' is not valid JSON: " + e.what(), "config");
  }
  return pipeline_config_from_json(j);
}

NGramLM pipeline_lm(const PipelineConfig& c, int order) {
  if (!c.lm.empty() && order == c.lm_order) return read_lm(c.lm);
  const Alphabet alphabet = c.alphabet.empty() ? english_alphabet() : load_alphabet(c.alphabet);
  std::vector<std::string> texts;
  for (const auto& p : c.lm_corpus) texts.push_back(read_text_file(p));
  return lm_train_text(texts, alphabet, order, c.lm_delta);
}

NGramLM pipeline_lm(const PipelineConfig& c) { return pipeline_lm(c, c.lm_order); }

GmmModel fit_transcription_model(const FeatureMatrix& features, const PipelineConfig& c,
                                 nlohmann::json* report) {
  GmmOptions o;
  o.K = c.K;
  o.seed = derive_seed(c.seed, 101);
  o.restarts = c.gmm_restarts;
  o.max_iters = c.gmm_max_iters;
  o.tol = c.gmm_tol;
  if (c.covariance == "auto") {
    auto sel = model_selection(features, o, default_covariance_options());
    if (report) {
      (*report)["selected"] = sel.best.gaussians.covariance.name();
      for (const auto& s : sel.scores) (*report)["scores"][s.covariance] = s.log_likelihood;
    }
    return std::move(sel.best);
  }
  o.covariance = CovarianceSpec::parse(c.covariance);
  auto m = gmm_fit(features, o);
  if (report) (*report)["selected"] = m.gaussians.covariance.name();
  return m;
}

nlohmann::json run_pipeline(const PipelineConfig& c) {
  c.validate();
  std::filesystem::create_directories(c.out_dir);
  const auto& out = c.out_dir;
  nlohmann::json summary = {{"config", to_json(c)}};
  nlohmann::json timing = nlohmann::json::object();
  nlohmann::json& stages = summary["stages"];
  nlohmann::json& metrics = summary["metrics"];
  metrics = nlohmann::json::object();
  StageClock clock(timing);

  const NGramLM lm = pipeline_lm(c);
  write_lm(out / "lm.json", lm);
  stages["lm"] = {{"order", lm.order()}, {"letters", lm.letters()}, {"delta", lm.delta()}};
  clock.mark("lm");

  Transcription transcription;
  std::optional<FeatureMatrix> features;
  if (!c.transcription.empty()) {
    transcription = read_transcription(c.transcription);
    stages["transcription"] = {{"source", c.transcription.string()}, {"K", transcription.K}};
  } else {
    Manifest manifest;
    std::optional<PageBitmap> page;
    if (!c.page.empty()) page = load_page(c.page, c.threshold);
    if (c.extractor != "external") {
      if (!c.manifest.empty()) {
        manifest = read_manifest(c.manifest);
        stages["segment"] = {{"source", c.manifest.string()}, {"cells", manifest.size()}};
      } else {
        const auto seg = segment_page(*page, c.segmentation);
        manifest = seg.cells;
        int fallback_rows = 0;
        for (const auto& r : seg.rows) fallback_rows += r.fallback ? 1 : 0;
        stages["segment"] = {{"rows", seg.rows.size()},
                             {"cells", manifest.size()},
                             {"fallback_rows", fallback_rows},
                             {"warnings", seg.warnings}};
      }
      write_manifest(out / "manifest.json", manifest);
      clock.mark("segment");
    }
    if (c.extractor == "external") {
      const std::size_t expected =
          !c.manifest.empty() ? read_manifest(c.manifest).size() : 0;
      features = expected ? import_features(c.features, expected)
                          : features_from_json(nlohmann::json::parse(read_text_file(c.features)));
    } else {
      const auto glyphs = glyphs_from_manifest(*page, manifest);
      features = c.extractor == "simmat" ? simmat_features(glyphs)
                                         : rawpixel_features(glyphs, c.rawpixel_block);
    }
    export_features(out / "features.json", *features);
    stages["features"] = {{"extractor", to_string(features->extractor)},
                          {"count", features->count()},
                          {"dim", features->dim()}};
    if (c.pca_dims > 0 && c.pca_dims < features->dim()) {
      features = pca_reduce(*features, c.pca_dims);
      stages["features"]["pca_dims"] = features->dim();
    }
    clock.mark("features");

    nlohmann::json report = nlohmann::json::object();
    const GmmModel gmm = fit_transcription_model(*features, c, &report);
    write_json(out / "gmm.json", to_json(gmm));
    transcription = gmm_assign(gmm, *features);
    report["K"] = transcription.K;
    report["log_likelihood"] = gmm.log_likelihood;
    stages["cluster"] = report;
    clock.mark("cluster");
  }
  write_transcription(out / "transcription.json", transcription);

  if (!c.gold_transcription.empty()) {
    const auto gold = read_gold_symbols(c.gold_transcription);
    NedoaOptions no;
    no.seed = derive_seed(c.seed, 201);
    const auto r = nedoa(transcription.ids, gold.ids, static_cast<int>(gold.types.size()), no);
    const auto report = nedoa_report(r, transcription.ids, gold);
    write_json(out / "nedoa.json", report, 2);
    metrics["nedoa"] = r.score;
  }
  if (!c.gold_manifest.empty()) {
    const auto gold = read_manifest(c.gold_manifest);
    if (stages.contains("segment")) {
      const double cells = stages["segment"]["cells"].get<double>();
      metrics["segment_cells"] = cells;
      metrics["gold_cells"] = gold.size();
      metrics["cell_count_error"] =
          gold.empty() ? 0.0 : std::abs(cells - static_cast<double>(gold.size())) / gold.size();
    }
  }

  std::vector<int> gold_plain;
  if (!c.gold_plaintext.empty()) {
    gold_plain = lm.alphabet().normalize(read_text_file(c.gold_plaintext));
  }

  Decipher3Options d3;
  d3.em.seed = derive_seed(c.seed, 301);
  d3.em.restarts = c.channel_restarts;
  d3.em.max_iters = c.channel_max_iters;
  d3.em.tol = c.channel_tol;
  d3.em.lm_exponent = c.train_exponent;
  d3.em.init_concentration = c.init_concentration;
  d3.decode_exponent = c.decode_exponent;
  d3.em.gold = gold_plain;
  d3.em.gold_decode_exponent = c.decode_exponent;
  Decipher3Result r3;
  if (c.bigram_seed_restarts > 0 && lm.order() == 3) {
    ChannelEmOptions seed_em = d3.em;
    seed_em.seed = derive_seed(c.seed, 302);
    seed_em.restarts = c.bigram_seed_restarts;
    r3 = decipher3_seeded(transcription, lm, pipeline_lm(c, 2), d3, seed_em);
  } else {
    r3 = decipher3(transcription, lm, d3);
  }
  write_channel(out / "channel.json", r3.em.channel, lm.alphabet());
  write_result(out / "result3.json", r3.result);
  stages["decipher3"] = {{"loglik", r3.result.log_likelihood},
                         {"seed", r3.result.seed},
                         {"iterations", r3.result.iterations}};
  clock.mark("decipher3");

  if (!gold_plain.empty()) {
    metrics["ned3"] = ned(r3.result.plaintext, gold_plain);
    scatter_dump(r3.em.restarts, out / "scatter3.csv");
  }

  std::string final_text = r3.result.text;
  if (c.mode == DecipherMode::two_stage) {
    Decipher2Options d2;
    d2.em.variant = lmgmm_variant_from_string(c.lmgmm_variant);
    d2.em.lm_exponent = c.lmgmm_exponent;
    d2.em.max_iters = c.lmgmm_max_iters;
    d2.em.tol = c.lmgmm_tol;
    d2.init.covariance = CovarianceSpec::parse(c.lmgmm_covariance);
    d2.init.noise_scale = c.lmgmm_noise;
    d2.init.seed = derive_seed(c.seed, 401);
    d2.restarts = c.lmgmm_restarts;
    const auto r2 = decipher2(*features, lm, r3.result.plaintext, d2, gold_plain, &transcription,
                              &r3.em.channel);
    write_json(out / "lmgmm_model.json", to_json(r2.model));
    write_result(out / "result2.json", r2.result);
    scatter_dump(r2.diagnostics, out / "scatter2.csv");
    stages["decipher2"] = {{"objective", r2.model.objective},
                           {"seed", r2.model.seed},
                           {"iterations", r2.model.iterations},
                           {"restarts", r2.diagnostics.size()},
                           {"init", {{"provenance", r2.provenance}, {"from", "result3.json"}}}};
    if (!gold_plain.empty()) metrics["ned2"] = ned(r2.result.plaintext, gold_plain);
    final_text = r2.result.text;
    clock.mark("decipher2");
  }
  {
    std::ofstream plain(out / "plaintext.txt");
    plain << final_text << '\n';
  }
  write_json(out / "summary.json", summary, 2);
  write_json(out / "timing.json", timing, 2);
  return summary;
}

}  // namespace cipherpipe
