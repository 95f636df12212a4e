#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "aftse/audio_io.hpp"
#include "aftse/config.hpp"

using namespace aftse;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AFTSE_CLI_PATH) + " --log-level warn " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const json& doc) { std::ofstream(path) << doc.dump(2); }

json tiny_doc() {
  return {{"preset", "desk"},
          {"seed", 3},
          {"data", {{"n_train", 8}, {"n_val", 2}, {"n_test", 3}}},
          {"predictor",
           {{"n_blocks", 2}, {"n_heads", 2}, {"width", 8}, {"mlp_hidden", 16}, {"time_embed_dim", 8}}},
          {"train", {{"epochs", 1}, {"batch_size", 4}, {"warmup_steps", 1}, {"val_examples", 2}}}};
}

}  // namespace

TEST_CASE("presets validate and differ where expected") {
  const RepoConfig paper = preset_config("paper");
  const RepoConfig desk = preset_config("desk");
  CHECK_NOTHROW(paper.validate());
  CHECK_NOTHROW(desk.validate());
  CHECK(paper.stft.n_fft == 510);
  CHECK(paper.stft.hop == 128);
  CHECK(paper.predictor.channels == 512);
  CHECK(paper.train.objective.lambda_fm == 0.6);
  CHECK(paper.train.objective.lambda_mf == 0.4);
  CHECK(paper.train.objective.rho == 0.5);
  CHECK(paper.train.sampler.large_span_prob == 0.15);
  CHECK(desk.predictor.channels == desk.stft.channels());
  CHECK(desk.inference.stft == desk.stft);
  CHECK_THROWS_AS(preset_config("laptop"), ValidationError);
}

TEST_CASE("JSON round trip and overrides") {
  const RepoConfig desk = preset_config("desk");
  const RepoConfig back = config_from_json(config_to_json(desk));
  CHECK(config_to_json(back) == config_to_json(desk));

  const RepoConfig c = config_from_json(json{{"preset", "desk"}, {"train", {{"epochs", 2}, {"objective", {{"rho", 0.25}}}}}});
  CHECK(c.train.epochs == 2);
  CHECK(c.train.objective.rho == 0.25);
  CHECK(c.train.objective.lambda_fm == desk.train.objective.lambda_fm);
  CHECK(c.predictor.width == desk.predictor.width);
  CHECK(config_from_json(json::object()).preset == "paper");
}

TEST_CASE("unknown keys and type mismatches are rejected with their path") {
  const auto message = [](const json& doc) {
    try {
      config_from_json(doc);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message({{"preset", "desk"}, {"train", {{"epoch", 3}}}}).find("train.epoch") != std::string::npos);
  CHECK(message({{"preset", "desk"}, {"train", {{"epochs", "3"}}}}).find("train.epochs") != std::string::npos);
  CHECK(message({{"preset", "desk"}, {"train", {{"epochs", 2.5}}}}).find("integer") != std::string::npos);
  CHECK(message({{"preset", "desk"}, {"seed", -1}}).find("seed") != std::string::npos);
  CHECK(message({{"preset", "desk"}, {"train", 4}}).find("object") != std::string::npos);
  CHECK(message({{"preset", 4}}).find("preset") != std::string::npos);
  CHECK(message(json::array()).find("object") != std::string::npos);
  CHECK(!message({{"preset", "desk"}, {"predictor", {{"channels", 10}}}}).empty());
  CHECK(!message({{"preset", "desk"}, {"train", {{"objective", {{"rho", 1.5}}}}}}).empty());
}

TEST_CASE("config files and the environment default") {
  const fs::path dir = fresh_dir("aftse_test_config");
  save_config(dir / "c.json", preset_config("desk"));
  CHECK(config_to_json(load_config(dir / "c.json")) == config_to_json(preset_config("desk")));
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ValidationError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);

  ::setenv("AFTSE_CONFIG", (dir / "c.json").c_str(), 1);
  REQUIRE(default_config_path().has_value());
  CHECK(*default_config_path() == dir / "c.json");
  ::unsetenv("AFTSE_CONFIG");
  CHECK(!default_config_path().has_value());
  fs::remove_all(dir);
}

TEST_CASE("command line end to end") {
  const fs::path dir = fresh_dir("aftse_test_cli");
  CHECK(run_cli("init --preset desk -o " + (dir / "desk.json").string()) == 0);
  CHECK(config_to_json(load_config(dir / "desk.json")) == config_to_json(preset_config("desk")));

  write_json(dir / "tiny.json", tiny_doc());
  const std::string cfg = " -c " + (dir / "tiny.json").string();
  REQUIRE(run_cli("gen-data" + cfg + " -o " + (dir / "data").string()) == 0);
  const Dataset ds = load_dataset(dir / "data");
  CHECK(ds.train.size() == 8);
  CHECK(ds.test.size() == 3);
  CHECK(ds.seed == 3);

  // A freshly built model has a zero head, so extraction returns the mixture.
  const RepoConfig tiny = config_from_json(tiny_doc());
  const UDiTBackbone model(tiny.predictor);
  const TrainState state(model.init_params(0), tiny.train.optimizer);
  save_checkpoint(dir / "zero.ckpt", make_velocity_checkpoint(model, state, tiny.train, tiny.stft));
  write_wav(dir / "mix.wav", ds.test[0].mixture, WavEncoding::Float64);
  write_wav(dir / "enr.wav", ds.test[0].enrollment, WavEncoding::Float64);
  REQUIRE(run_cli("extract --checkpoint " + (dir / "zero.ckpt").string() + " --mixture " + (dir / "mix.wav").string() +
                  " --enrollment " + (dir / "enr.wav").string() + " -o " + (dir / "est.wav").string() +
                  " --chunk-frames 16 --dump-spectrogram " + (dir / "est.afsg").string()) == 0);
  const Waveform est = read_wav(dir / "est.wav");
  REQUIRE(est.size() == ds.test[0].mixture.size());
  CHECK((est.samples - ds.test[0].mixture.samples).norm() / ds.test[0].mixture.samples.norm() < 1e-6);
  CHECK(fs::exists(dir / "est.afsg"));

  CHECK(run_cli("eval --mode reference" + cfg + " --data " + (dir / "data").string() + " -o " +
                (dir / "ref").string()) == 0);
  std::ifstream summary(dir / "ref" / "summary.json");
  const json s = json::parse(summary);
  CHECK(s.at(0).at("si_sdr").get<double>() == doctest::Approx(100.0));

  REQUIRE(run_cli("train" + cfg + " --data " + (dir / "data").string() + " -o " + (dir / "run").string()) == 0);
  CHECK(fs::exists(dir / "run" / "latest.ckpt"));
  CHECK(run_cli("eval" + cfg + " --checkpoint " + (dir / "run" / "latest.ckpt").string() + " --data " +
                (dir / "data").string() + " -o " + (dir / "std").string()) == 0);
  CHECK(fs::exists(dir / "std" / "rows.tsv"));

  // Exit codes: 2 for invalid input, 3 for I/O failures.
  CHECK(run_cli("extract --checkpoint " + (dir / "zero.ckpt").string() + " --mixture " + (dir / "mix.wav").string() +
                " --enrollment " + (dir / "enr.wav").string() + " -o " + (dir / "x.wav").string() + " --mr") == 2);
  CHECK(run_cli("gen-data -c " + (dir / "missing.json").string() + " -o " + (dir / "d2").string()) == 3);
  CHECK(run_cli("frobnicate") != 0);
  fs::remove_all(dir);
}
