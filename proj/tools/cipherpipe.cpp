#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cipherpipe/alphabet.hpp>
#include <cipherpipe/char_lm.hpp>
#include <cipherpipe/cluster_gmm.hpp>
#include <cipherpipe/eval_metrics.hpp>
#include <cipherpipe/glyph_features.hpp>
#include <cipherpipe/lm_gmm.hpp>
#include <cipherpipe/noisy_channel.hpp>
#include <cipherpipe/page_model.hpp>
#include <cipherpipe/pipeline.hpp>
#include <cipherpipe/segmenter.hpp>
#include <cipherpipe/synth_cipher.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "json_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cipherpipe;

namespace {

struct Common {
  std::uint64_t seed = 1;
  fs::path out = ".";
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help,
                      Common& common) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--seed", common.seed, "Base random seed")->capture_default_str();
  sub->add_option("--out", common.out, "Output directory")->capture_default_str();
  sub->set_config("--config", "", "JSON file with option values");
  sub->config_formatter(std::make_shared<cli::JsonConfig>());
  return sub;
}

json read_json(const fs::path& path, const std::string& stage) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read '" + path.string() + "'", stage);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("'" + path.string() + "' is not valid JSON: " + e.what(), stage);
  }
}

void write_json(const fs::path& path, const json& j, const std::string& stage) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'", stage);
  out << j.dump(2) << '\n';
}

fs::path prepare_out(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

Alphabet alphabet_from(const fs::path& path) {
  return path.empty() ? english_alphabet() : load_alphabet(path);
}

/// Plaintext letters from a result JSON ({"plaintext": ...}) or a text file.
std::vector<int> read_plaintext(const fs::path& path, const Alphabet& alphabet) {
  if (path.extension() == ".json") {
    return alphabet.normalize(read_json(path, "eval").at("plaintext").get<std::string>());
  }
  return alphabet.normalize(read_text_file(path));
}

/// Symbol sequence from a transcription JSON or a whitespace-separated file.
SymbolSequence read_symbols(const fs::path& path, const char* prefix) {
  if (path.extension() == ".json") {
    const auto t = read_transcription(path);
    SymbolSequence s;
    for (int k = 0; k < t.K; ++k) s.types.push_back(prefix + std::to_string(k));
    s.ids = t.ids;
    return s;
  }
  return parse_symbols(read_text_file(path));
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  fs::path plaintext, corpus, vocabulary, alphabet, options;
  std::size_t length = 0;
  int distinct = 0;
  double zipf_exponent = 1.0;
  std::string width_mode = "fixed", key_mode = "simple";
  int symbols = 0, chars_per_line = 40, spacing = 12, jitter = 0, max_lines = -1;
  double noise = 0.0;
};

json run_synth(const Common& c, const SynthArgs& a) {
  const Alphabet alphabet = alphabet_from(a.alphabet);
  std::vector<int> plain;
  std::vector<std::vector<int>> corpus_seqs;
  if (!a.plaintext.empty()) {
    plain = alphabet.normalize(read_text_file(a.plaintext));
  } else if (!a.corpus.empty()) {
    if (a.length == 0) throw Error("--corpus needs --length", "synth");
    const auto text = alphabet.normalize(read_text_file(a.corpus));
    corpus_seqs.push_back(text);
    plain = pick_passage(text, a.length, a.distinct, derive_seed(c.seed, 5));
  } else if (!a.vocabulary.empty()) {
    if (a.length == 0) throw Error("--vocabulary needs --length", "synth");
    std::vector<std::vector<int>> words;
    for (const auto& w : load_vocabulary(a.vocabulary)) words.push_back(alphabet.normalize(w));
    plain = zipf_text(words, a.length, a.zipf_exponent, derive_seed(c.seed, 5));
  } else {
    throw Error("synth needs --plaintext, --corpus or --vocabulary", "synth");
  }

  SynthOptions o;
  if (!a.options.empty()) o = synth_options_from_json(read_json(a.options, "synth"));
  o.seed = c.seed;
  o.glyphs.mode = width_mode_from_string(a.width_mode);
  if (a.key_mode == "simple") {
    o.key_mode = KeyMode::simple;
  } else if (a.key_mode == "homophonic") {
    o.key_mode = KeyMode::homophonic;
  } else {
    throw Error("key mode must be simple or homophonic", "synth");
  }
  o.symbols = a.symbols;
  o.layout.chars_per_line = a.chars_per_line;
  o.layout.spacing = a.spacing;
  o.layout.jitter = a.jitter;
  o.layout.max_lines = a.max_lines;
  o.layout.flip_probability = a.noise;

  std::vector<double> freq;
  if (o.key_mode == KeyMode::homophonic) {
    if (corpus_seqs.empty()) corpus_seqs.push_back(plain);
    freq = unigram_frequencies(corpus_seqs, alphabet.size());
  }
  const auto s = synth_cipher(plain, alphabet, o, freq);
  const fs::path out = prepare_out(c);
  write_synth(out, s);
  json summary = {{"letters", s.plaintext.size()},
                  {"symbols", s.key.symbols},
                  {"cells", s.rendered.gold_cells.size()},
                  {"lines", s.rendered.lines},
                  {"width", s.rendered.page.width()},
                  {"height", s.rendered.page.height()},
                  {"options", to_json(o)}};
  write_json(out / "synth.json", summary, "synth");
  return summary;
}

// --- segment / features / cluster ------------------------------------------

struct SegmentArgs {
  fs::path page, seg_params, gold_manifest;
  int threshold = 128;
};

json run_segment(const Common& c, const SegmentArgs& a) {
  SegmentationParams params;
  if (!a.seg_params.empty()) {
    params = segmentation_params_from_json(read_json(a.seg_params, "segment"));
  }
  params.validate();
  const auto page = load_page(a.page, a.threshold);
  const auto seg = segment_page(page, params);
  const fs::path out = prepare_out(c);
  write_manifest(out / "manifest.json", seg.cells);
  json summary = {{"rows", seg.rows.size()}, {"cells", seg.cells.size()},
                  {"warnings", seg.warnings}};
  if (!a.gold_manifest.empty()) {
    const auto gold = read_manifest(a.gold_manifest);
    summary["gold_cells"] = gold.size();
    summary["cell_count_error"] =
        gold.empty() ? 0.0
                     : std::abs(static_cast<double>(seg.cells.size()) -
                                static_cast<double>(gold.size())) /
                           static_cast<double>(gold.size());
  }
  return summary;
}

struct FeaturesArgs {
  fs::path page, manifest, import;
  int threshold = 128;
  std::string extractor = "simmat";
  int block = 5;
  int pca = 0;
};

json run_features(const Common& c, const FeaturesArgs& a) {
  const auto manifest = read_manifest(a.manifest);
  FeatureMatrix f;
  if (a.extractor == "external") {
    if (a.import.empty()) throw Error("extractor 'external' needs --import", "features");
    f = import_features(a.import, manifest.size());
  } else {
    if (a.page.empty()) throw Error("--page is required", "features");
    const auto glyphs = glyphs_from_manifest(load_page(a.page, a.threshold), manifest);
    if (a.extractor == "simmat") {
      f = simmat_features(glyphs);
    } else if (a.extractor == "rawpixel") {
      f = rawpixel_features(glyphs, a.block);
    } else {
      throw Error("unknown extractor '" + a.extractor + "'", "features");
    }
  }
  if (a.pca > 0 && a.pca < f.dim()) f = pca_reduce(f, a.pca);
  const fs::path out = prepare_out(c);
  export_features(out / "features.json", f);
  return {{"extractor", to_string(f.extractor)}, {"count", f.count()}, {"dim", f.dim()}};
}

struct ClusterArgs {
  fs::path features;
  int K = 0;
  std::string covariance = "auto";
  int restarts = 10;
  int max_iters = 200;
  double tol = 1e-6;
};

json run_cluster(const Common& c, const ClusterArgs& a) {
  const auto f = features_from_json(read_json(a.features, "cluster"));
  PipelineConfig cfg;
  cfg.seed = c.seed;
  cfg.K = a.K;
  cfg.covariance = a.covariance;
  cfg.gmm_restarts = a.restarts;
  cfg.gmm_max_iters = a.max_iters;
  cfg.gmm_tol = a.tol;
  if (a.K < 1) throw Error("--K must be >= 1", "cluster");
  json report = json::object();
  const auto model = fit_transcription_model(f, cfg, &report);
  const auto t = gmm_assign(model, f);
  const fs::path out = prepare_out(c);
  write_json(out / "gmm.json", to_json(model), "cluster");
  write_transcription(out / "transcription.json", t);
  report["log_likelihood"] = model.log_likelihood;
  return report;
}

// --- lm-train ----------------------------------------------------------------

struct LmArgs {
  std::vector<fs::path> corpus;
  fs::path alphabet;
  int order = 2;
  double delta = 0.1;
};

json run_lm_train(const Common& c, const LmArgs& a) {
  if (a.order != 2 && a.order != 3) throw Error("--order must be 2 or 3", "lm");
  std::vector<std::string> texts;
  for (const auto& p : a.corpus) texts.push_back(read_text_file(p));
  const auto lm = lm_train_text(texts, alphabet_from(a.alphabet), a.order, a.delta);
  const fs::path out = prepare_out(c);
  write_lm(out / "lm.json", lm);
  std::size_t chars = 0;
  for (const auto& t : texts) chars += lm.alphabet().normalize(t).size();
  return {{"order", lm.order()}, {"letters", lm.letters()}, {"delta", lm.delta()},
          {"training_letters", chars}};
}

// --- decipher3 / decipher2 / scatter ---------------------------------------

struct Decipher3Args {
  fs::path transcription, gold_transcription, lm, seed_lm, gold_plaintext;
  int restarts = 100, seed_restarts = 20, max_iters = 200;
  double tol = 1e-7, train_exponent = 1.0, decode_exponent = 1.0, concentration = 1.0;
};

json run_decipher3(const Common& c, const Decipher3Args& a) {
  if (a.transcription.empty() == a.gold_transcription.empty()) {
    throw Error("give exactly one of --transcription and --gold-transcription", "decipher");
  }
  const auto t = read_transcription(a.transcription.empty() ? a.gold_transcription
                                                            : a.transcription);
  const auto lm = read_lm(a.lm);
  Decipher3Options o;
  o.em.seed = c.seed;
  o.em.restarts = a.restarts;
  o.em.max_iters = a.max_iters;
  o.em.tol = a.tol;
  o.em.lm_exponent = a.train_exponent;
  o.em.init_concentration = a.concentration;
  o.decode_exponent = a.decode_exponent;
  if (!a.gold_plaintext.empty()) {
    o.em.gold = read_plaintext(a.gold_plaintext, lm.alphabet());
    o.em.gold_decode_exponent = a.decode_exponent;
  }
  Decipher3Result r;
  if (!a.seed_lm.empty()) {
    ChannelEmOptions seed_em = o.em;
    seed_em.seed = derive_seed(c.seed, 1);
    seed_em.restarts = a.seed_restarts;
    r = decipher3_seeded(t, lm, read_lm(a.seed_lm), o, seed_em);
  } else {
    r = decipher3(t, lm, o);
  }
  const fs::path out = prepare_out(c);
  write_channel(out / "channel.json", r.em.channel, lm.alphabet());
  write_result(out / "result3.json", r.result);
  scatter_dump(r.em.restarts, out / "scatter3.csv");
  {
    std::ofstream plain(out / "plaintext.txt");
    plain << r.result.text << '\n';
  }
  json summary = {{"loglik", r.result.log_likelihood},
                  {"seed", r.result.seed},
                  {"iterations", r.result.iterations},
                  {"input", a.transcription.empty() ? "gold" : "auto"}};
  if (!o.em.gold.empty()) summary["ned"] = ned(r.result.plaintext, o.em.gold);
  return summary;
}

struct Decipher2Args {
  fs::path features, lm, result3, transcription, channel, gold_plaintext;
  std::string variant = "simplified", covariance = "spherical";
  int restarts = 50, max_iters = 100;
  double exponent = 3.0, noise = 0.1, tol = 1e-7;
};

json run_decipher2(const Common& c, const Decipher2Args& a) {
  const auto f = features_from_json(read_json(a.features, "lmgmm"));
  const auto lm = read_lm(a.lm);
  const auto decoded3 = read_plaintext(a.result3, lm.alphabet());
  Decipher2Options o;
  o.em.variant = lmgmm_variant_from_string(a.variant);
  o.em.lm_exponent = a.exponent;
  o.em.max_iters = a.max_iters;
  o.em.tol = a.tol;
  o.init.covariance = CovarianceSpec::parse(a.covariance);
  o.init.noise_scale = a.noise;
  o.init.seed = c.seed;
  o.restarts = a.restarts;
  std::optional<Transcription> t;
  std::optional<ChannelMatrix> ch;
  if (o.em.variant == LmGmmVariant::full) {
    if (a.transcription.empty() || a.channel.empty()) {
      throw Error("the full variant needs --transcription and --channel", "lmgmm");
    }
    t = read_transcription(a.transcription);
    ch = read_channel(a.channel);
  }
  std::vector<int> gold;
  if (!a.gold_plaintext.empty()) gold = read_plaintext(a.gold_plaintext, lm.alphabet());
  const auto r = decipher2(f, lm, decoded3, o, gold, t ? &*t : nullptr, ch ? &*ch : nullptr);
  const fs::path out = prepare_out(c);
  write_json(out / "lmgmm_model.json", to_json(r.model), "lmgmm");
  write_result(out / "result2.json", r.result);
  scatter_dump(r.diagnostics, out / "scatter2.csv");
  {
    std::ofstream plain(out / "plaintext.txt");
    plain << r.result.text << '\n';
  }
  json summary = {{"objective", r.model.objective},
                  {"seed", r.model.seed},
                  {"iterations", r.model.iterations},
                  {"init", {{"provenance", r.provenance}, {"from", a.result3.string()}}}};
  if (!gold.empty()) summary["ned"] = ned(r.result.plaintext, gold);
  return summary;
}

struct ScatterArgs {
  fs::path transcription, lm, gold_plaintext;
  int restarts = 100, max_iters = 200;
  double tol = 1e-7, exponent = 1.0, concentration = 1.0;
};

/// Restart-by-restart log-likelihood and NED of 3-stage channel EM.
json run_scatter(const Common& c, const ScatterArgs& a) {
  const auto t = read_transcription(a.transcription);
  const auto lm = read_lm(a.lm);
  ChannelEmOptions o;
  o.seed = c.seed;
  o.restarts = a.restarts;
  o.max_iters = a.max_iters;
  o.tol = a.tol;
  o.lm_exponent = a.exponent;
  o.init_concentration = a.concentration;
  o.gold = read_plaintext(a.gold_plaintext, lm.alphabet());
  o.gold_decode_exponent = a.exponent;
  const auto r = channel_em(t, lm, o);
  const fs::path out = prepare_out(c);
  scatter_dump(r.restarts, out / "scatter.csv");
  double best_ned = 1e300;
  for (const auto& rec : r.restarts) best_ned = std::min(best_ned, *rec.ned);
  double chosen = 0.0;
  for (const auto& rec : r.restarts) {
    if (rec.seed == r.seed) chosen = *rec.ned;
  }
  return {{"restarts", r.restarts.size()}, {"best_loglik", r.log_likelihood},
          {"ned_of_best_loglik", chosen}, {"lowest_ned", best_ned}};
}

// --- eval ----------------------------------------------------------------------

struct EvalNedArgs {
  fs::path hyp, ref, alphabet;
};

json run_eval_ned(const Common& c, const EvalNedArgs& a) {
  const Alphabet alphabet = alphabet_from(a.alphabet);
  const auto hyp = read_plaintext(a.hyp, alphabet);
  const auto ref = read_plaintext(a.ref, alphabet);
  const json report = {{"score", ned(hyp, ref)},
                       {"distance", edit_distance(hyp, ref)},
                       {"reference_length", ref.size()}};
  write_json(prepare_out(c) / "ned.json", report, "eval");
  return report;
}

struct EvalNedoaArgs {
  fs::path auto_path, gold;
  std::string method = "em";
  int restarts = 20, max_iters = 100;
};

json run_eval_nedoa(const Common& c, const EvalNedoaArgs& a) {
  const auto hyp = read_symbols(a.auto_path, "c");
  const auto gold = read_symbols(a.gold, "g");
  NedoaOptions o;
  o.seed = c.seed;
  o.restarts = a.restarts;
  o.max_iters = a.max_iters;
  if (a.method == "em") {
    o.method = NedoaMethod::em;
  } else if (a.method == "exhaustive") {
    o.method = NedoaMethod::exhaustive;
  } else {
    throw Error("method must be em or exhaustive", "eval");
  }
  const auto r = nedoa(hyp.ids, gold.ids, static_cast<int>(gold.types.size()), o);
  const json report = nedoa_report(r, hyp.ids, gold, hyp.types);
  write_json(prepare_out(c) / "nedoa.json", report, "eval");
  return report;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cipher manuscript pipeline: segmentation, transcription, decipherment"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")
      ->capture_default_str();

  Common common;
  json result;
  std::function<json()> action;

  SynthArgs sa;
  auto* synth = add_command(app, "synth", "Render a synthetic cipher page with gold files", common);
  auto* src = synth->add_option_group("source");
  src->add_option("--plaintext", sa.plaintext, "Plaintext file")->check(CLI::ExistingFile);
  src->add_option("--corpus", sa.corpus, "Text to cut a passage from")->check(CLI::ExistingFile);
  src->add_option("--vocabulary", sa.vocabulary, "Word list for Zipf sampling")
      ->check(CLI::ExistingFile);
  src->require_option(1);
  synth->add_option("--length", sa.length, "Letters to draw from corpus or vocabulary");
  synth->add_option("--distinct", sa.distinct, "Distinct letters in a corpus passage");
  synth->add_option("--zipf-exponent", sa.zipf_exponent)->capture_default_str();
  synth->add_option("--alphabet", sa.alphabet, "Alphabet JSON")->check(CLI::ExistingFile);
  synth->add_option("--options", sa.options, "SynthOptions JSON")->check(CLI::ExistingFile);
  synth->add_option("--width-mode", sa.width_mode)
      ->check(CLI::IsMember({"fixed", "variable"}))
      ->capture_default_str();
  synth->add_option("--key-mode", sa.key_mode)
      ->check(CLI::IsMember({"simple", "homophonic"}))
      ->capture_default_str();
  synth->add_option("--symbols", sa.symbols, "Glyph count (homophonic)");
  synth->add_option("--chars-per-line", sa.chars_per_line)->capture_default_str();
  synth->add_option("--spacing", sa.spacing)->capture_default_str();
  synth->add_option("--jitter", sa.jitter)->capture_default_str();
  synth->add_option("--max-lines", sa.max_lines)->capture_default_str();
  synth->add_option("--noise", sa.noise, "Pixel flip probability")->capture_default_str();
  synth->callback([&] { action = [&] { return run_synth(common, sa); }; });

  SegmentArgs sg;
  auto* segment = add_command(app, "segment", "Cut a page into glyph cells", common);
  segment->add_option("--page", sg.page)->required()->check(CLI::ExistingFile);
  segment->add_option("--seg-params", sg.seg_params, "Segmentation parameter JSON")
      ->check(CLI::ExistingFile);
  segment->add_option("--threshold", sg.threshold)->capture_default_str();
  segment->add_option("--gold-manifest", sg.gold_manifest)->check(CLI::ExistingFile);
  segment->callback([&] { action = [&] { return run_segment(common, sg); }; });

  FeaturesArgs fa;
  auto* features = add_command(app, "features", "Glyph feature vectors for a manifest", common);
  features->add_option("--manifest", fa.manifest)->required()->check(CLI::ExistingFile);
  features->add_option("--page", fa.page)->check(CLI::ExistingFile);
  features->add_option("--threshold", fa.threshold)->capture_default_str();
  features->add_option("--extractor", fa.extractor)
      ->check(CLI::IsMember({"simmat", "rawpixel", "external"}))
      ->capture_default_str();
  features->add_option("--import", fa.import, "External feature file")->check(CLI::ExistingFile);
  features->add_option("--block", fa.block, "Rawpixel pooling block")->capture_default_str();
  features->add_option("--pca", fa.pca, "Project to this many dimensions")->capture_default_str();
  features->callback([&] { action = [&] { return run_features(common, fa); }; });

  ClusterArgs ca;
  auto* cluster = add_command(app, "cluster", "GMM clustering into a transcription", common);
  cluster->add_option("--features", ca.features)->required()->check(CLI::ExistingFile);
  cluster->add_option("--K", ca.K, "Number of clusters")->required();
  cluster->add_option("--covariance", ca.covariance, "auto|diagonal|spherical|fixed:<v>")
      ->capture_default_str();
  cluster->add_option("--restarts", ca.restarts)->capture_default_str();
  cluster->add_option("--max-iters", ca.max_iters)->capture_default_str();
  cluster->add_option("--tol", ca.tol)->capture_default_str();
  cluster->callback([&] { action = [&] { return run_cluster(common, ca); }; });

  LmArgs la;
  auto* lm_train = add_command(app, "lm-train", "Train a character n-gram model", common);
  lm_train->add_option("--corpus", la.corpus)->required()->check(CLI::ExistingFile);
  lm_train->add_option("--alphabet", la.alphabet)->check(CLI::ExistingFile);
  lm_train->add_option("--order", la.order)->check(CLI::Range(2, 3))->capture_default_str();
  lm_train->add_option("--delta", la.delta)->check(CLI::NonNegativeNumber)->capture_default_str();
  lm_train->callback([&] { action = [&] { return run_lm_train(common, la); }; });

  Decipher3Args d3;
  auto* decipher3_cmd = add_command(app, "decipher3", "Channel EM on a transcription", common);
  decipher3_cmd->add_option("--transcription", d3.transcription)->check(CLI::ExistingFile);
  decipher3_cmd->add_option("--gold-transcription", d3.gold_transcription)
      ->check(CLI::ExistingFile);
  decipher3_cmd->add_option("--lm", d3.lm)->required()->check(CLI::ExistingFile);
  decipher3_cmd->add_option("--seed-lm", d3.seed_lm, "Lower-order LM whose best channel seeds restart 0")
      ->check(CLI::ExistingFile);
  decipher3_cmd->add_option("--seed-restarts", d3.seed_restarts)->capture_default_str();
  decipher3_cmd->add_option("--gold-plaintext", d3.gold_plaintext)->check(CLI::ExistingFile);
  decipher3_cmd->add_option("--restarts", d3.restarts)->capture_default_str();
  decipher3_cmd->add_option("--max-iters", d3.max_iters)->capture_default_str();
  decipher3_cmd->add_option("--tol", d3.tol)->capture_default_str();
  decipher3_cmd->add_option("--train-exponent", d3.train_exponent)->capture_default_str();
  decipher3_cmd->add_option("--decode-exponent", d3.decode_exponent)->capture_default_str();
  decipher3_cmd->add_option("--init-concentration", d3.concentration)->capture_default_str();
  decipher3_cmd->callback([&] { action = [&] { return run_decipher3(common, d3); }; });

  Decipher2Args d2;
  auto* decipher2_cmd = add_command(app, "decipher2", "LM-GMM EM on glyph features", common);
  decipher2_cmd->add_option("--features", d2.features)->required()->check(CLI::ExistingFile);
  decipher2_cmd->add_option("--lm", d2.lm)->required()->check(CLI::ExistingFile);
  decipher2_cmd->add_option("--result3", d2.result3, "3-stage result JSON")
      ->required()
      ->check(CLI::ExistingFile);
  decipher2_cmd->add_option("--transcription", d2.transcription)->check(CLI::ExistingFile);
  decipher2_cmd->add_option("--channel", d2.channel)->check(CLI::ExistingFile);
  decipher2_cmd->add_option("--gold-plaintext", d2.gold_plaintext)->check(CLI::ExistingFile);
  decipher2_cmd->add_option("--variant", d2.variant)
      ->check(CLI::IsMember({"simplified", "full"}))
      ->capture_default_str();
  decipher2_cmd->add_option("--covariance", d2.covariance)->capture_default_str();
  decipher2_cmd->add_option("--exponent", d2.exponent)->capture_default_str();
  decipher2_cmd->add_option("--noise", d2.noise)->capture_default_str();
  decipher2_cmd->add_option("--restarts", d2.restarts)->capture_default_str();
  decipher2_cmd->add_option("--max-iters", d2.max_iters)->capture_default_str();
  decipher2_cmd->add_option("--tol", d2.tol)->capture_default_str();
  decipher2_cmd->callback([&] { action = [&] { return run_decipher2(common, d2); }; });

  ScatterArgs sc;
  auto* scatter = add_command(app, "scatter", "Per-restart log-likelihood vs NED as CSV", common);
  scatter->add_option("--transcription", sc.transcription)->required()->check(CLI::ExistingFile);
  scatter->add_option("--lm", sc.lm)->required()->check(CLI::ExistingFile);
  scatter->add_option("--gold-plaintext", sc.gold_plaintext)
      ->required()
      ->check(CLI::ExistingFile);
  scatter->add_option("--restarts", sc.restarts)->capture_default_str();
  scatter->add_option("--max-iters", sc.max_iters)->capture_default_str();
  scatter->add_option("--tol", sc.tol)->capture_default_str();
  scatter->add_option("--exponent", sc.exponent)->capture_default_str();
  scatter->add_option("--init-concentration", sc.concentration)->capture_default_str();
  scatter->callback([&] { action = [&] { return run_scatter(common, sc); }; });

  EvalNedArgs en;
  auto* eval_ned = add_command(app, "eval-ned", "Normalised edit distance", common);
  eval_ned->add_option("--hyp", en.hyp, "Result JSON or text")->required()->check(CLI::ExistingFile);
  eval_ned->add_option("--ref", en.ref, "Reference text")->required()->check(CLI::ExistingFile);
  eval_ned->add_option("--alphabet", en.alphabet)->check(CLI::ExistingFile);
  eval_ned->callback([&] { action = [&] { return run_eval_ned(common, en); }; });

  EvalNedoaArgs eo;
  auto* eval_nedoa = add_command(app, "eval-nedoa", "NED after optimal cluster-to-gold mapping", common);
  eval_nedoa->add_option("--auto", eo.auto_path, "Transcription JSON or symbol text")
      ->required()
      ->check(CLI::ExistingFile);
  eval_nedoa->add_option("--gold", eo.gold, "Gold symbols (text or transcription JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_nedoa->add_option("--method", eo.method)
      ->check(CLI::IsMember({"em", "exhaustive"}))
      ->capture_default_str();
  eval_nedoa->add_option("--restarts", eo.restarts)->capture_default_str();
  eval_nedoa->add_option("--max-iters", eo.max_iters)->capture_default_str();
  eval_nedoa->callback([&] { action = [&] { return run_eval_nedoa(common, eo); }; });

  fs::path run_config;
  bool seed_given = false;
  bool out_given = false;
  auto* run = app.add_subcommand("run", "Full pipeline from a JSON config");
  run->add_option("--config", run_config, "Pipeline config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  auto* run_seed = run->add_option("--seed", common.seed, "Overrides the config seed");
  auto* run_out = run->add_option("--out", common.out, "Overrides the config output directory");
  run->callback([&] {
    seed_given = run_seed->count() > 0;
    out_given = run_out->count() > 0;
    action = [&] {
      auto cfg = read_pipeline_config(run_config);
      if (seed_given) cfg.seed = common.seed;
      if (out_given) cfg.out_dir = common.out;
      return run_pipeline(cfg)["metrics"];
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  // stdout carries the JSON result; logs go to stderr.
  spdlog::set_default_logger(spdlog::stderr_color_mt("cipherpipe"));
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    result = action();
  } catch (const Error& e) {
    const std::string stage = e.stage().empty() ? "error" : e.stage();
    std::cerr << "cipherpipe: [" << stage << "] " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "cipherpipe: [internal] " << e.what() << '\n';
    return 3;
  }
  std::cout << result.dump(2) << '\n';
  return 0;
}
