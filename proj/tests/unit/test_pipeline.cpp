#include <doctest.h>

#include <cipherpipe/common.hpp>
#include <cipherpipe/pipeline.hpp>
#include <cipherpipe/synth_cipher.hpp>

#include <filesystem>
#include <fstream>

using namespace cipherpipe;
namespace fs = std::filesystem;

namespace {

const std::string kData = CIPHERPIPE_DATA_DIR;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cipherpipe_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A short fixed-width synthetic cipher written to dir/synth.
void make_synth(const fs::path& dir) {
  const auto text =
      english_alphabet().normalize(read_text_file(kData + "/corpus/english/heldout.txt"));
  const auto passage = pick_passage(text, 160, 18, 2);
  SynthOptions o;
  o.seed = 2;
  o.layout.chars_per_line = 40;
  write_synth(dir / "synth", synth_cipher(passage, english_alphabet(), o));
}

nlohmann::json base_config(const fs::path& dir) {
  return {
      {"seed", 3},
      {"out_dir", (dir / "out").string()},
      {"input",
       {{"page", (dir / "synth/page.png").string()},
        {"gold_plaintext", (dir / "synth/plaintext.txt").string()},
        {"gold_transcription", (dir / "synth/gold_transcription.json").string()},
        {"gold_manifest", (dir / "synth/gold_manifest.json").string()}}},
      {"cluster", {{"K", 18}, {"covariance", "diagonal"}, {"restarts", 3}}},
      {"lm",
       {{"corpus",
         {kData + "/corpus/english/train_01.txt", kData + "/corpus/english/train_02.txt"}},
        {"order", 2}}},
      {"decipher", {{"mode", "2stage"}, {"restarts", 4}, {"max_iters", 50}}},
      {"lmgmm", {{"restarts", 2}, {"max_iters", 20}}}};
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

}  // namespace

TEST_CASE("config parsing rejects unknown keys") {
  CHECK_THROWS_AS(pipeline_config_from_json({{"sed", 1}}), Error);
  CHECK_THROWS_AS(pipeline_config_from_json({{"lm", {{"orders", 2}}}}), Error);
  CHECK_THROWS_AS(pipeline_config_from_json({{"decipher", {{"mode", "4stage"}}}}), Error);
  const auto c = pipeline_config_from_json(
      {{"seed", 9}, {"decipher", {{"mode", "2stage"}, {"bigram_seed_restarts", 3}}}});
  CHECK(c.seed == 9);
  CHECK(c.mode == DecipherMode::two_stage);
  CHECK(c.bigram_seed_restarts == 3);
  const auto again = pipeline_config_from_json(to_json(c));
  CHECK(to_json(again) == to_json(c));
}

TEST_CASE("config validation") {
  const auto dir = scratch("validate");
  make_synth(dir);
  auto j = base_config(dir);
  CHECK_NOTHROW(pipeline_config_from_json(j).validate());

  auto missing = j;
  missing["input"]["page"] = (dir / "nope.png").string();
  CHECK_THROWS_AS(pipeline_config_from_json(missing).validate(), Error);

  auto no_lm = j;
  no_lm.erase("lm");
  CHECK_THROWS_AS(pipeline_config_from_json(no_lm).validate(), Error);

  auto bad_k = j;
  bad_k["cluster"]["K"] = 0;
  CHECK_THROWS_AS(pipeline_config_from_json(bad_k).validate(), Error);

  auto ready = j;
  ready["input"] = {{"transcription", (dir / "synth/gold_transcription.json").string()}};
  CHECK_THROWS_AS(pipeline_config_from_json(ready).validate(), Error);
  ready["decipher"]["mode"] = "3stage";
  CHECK_NOTHROW(pipeline_config_from_json(ready).validate());

  auto seeded = j;
  seeded["lm"] = {{"path", "unused"}, {"order", 3}};
  seeded["decipher"]["bigram_seed_restarts"] = 2;
  CHECK_THROWS_AS(pipeline_config_from_json(seeded).validate(), Error);
  fs::remove_all(dir);
}

TEST_CASE("small run writes every artifact and reruns identically") {
  const auto dir = scratch("run");
  make_synth(dir);
  const auto c = pipeline_config_from_json(base_config(dir));
  const auto summary = run_pipeline(c);
  const auto out = dir / "out";
  for (const char* f : {"lm.json", "manifest.json", "features.json", "gmm.json",
                        "transcription.json", "nedoa.json", "channel.json", "result3.json",
                        "scatter3.csv", "lmgmm_model.json", "result2.json", "scatter2.csv",
                        "plaintext.txt", "summary.json", "timing.json"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  const auto& m = summary["metrics"];
  CHECK(m["cell_count_error"].get<double>() == 0.0);
  CHECK(m["nedoa"].get<double>() == 0.0);
  CHECK(m.contains("ned3"));
  CHECK(m.contains("ned2"));
  CHECK(summary["stages"]["decipher2"]["init"]["provenance"] == "3stage-plaintext");
  CHECK(summary["stages"]["decipher2"]["init"]["from"] == "result3.json");

  const auto first = slurp(out / "summary.json");
  run_pipeline(c);
  CHECK(slurp(out / "summary.json") == first);
  fs::remove_all(dir);
}

TEST_CASE("a ready transcription skips segmentation and clustering") {
  const auto dir = scratch("ready");
  make_synth(dir);
  auto j = base_config(dir);
  j["input"] = {{"transcription", (dir / "synth/gold_transcription.json").string()},
                {"gold_plaintext", (dir / "synth/plaintext.txt").string()}};
  j["decipher"]["mode"] = "3stage";
  const auto summary = run_pipeline(pipeline_config_from_json(j));
  CHECK(summary["stages"].contains("transcription"));
  CHECK_FALSE(summary["stages"].contains("segment"));
  CHECK_FALSE(fs::exists(dir / "out/features.json"));
  CHECK(summary["metrics"]["ned3"].get<double>() <= 1.0);
  fs::remove_all(dir);
}
