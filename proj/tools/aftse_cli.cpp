// aftse: dataset generation, training, one-step extraction and evaluation.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include <spdlog/spdlog.h>

#include "aftse/audio_io.hpp"
#include "aftse/config.hpp"
#include "aftse/evaluation.hpp"

namespace fs = std::filesystem;
using namespace aftse;

namespace {

struct ConfigArgs {
  std::string config_path;
  std::string preset = "desk";
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "Config file (default: $AFTSE_CONFIG, else --preset)");
  cmd->add_option("--preset", args.preset, "Preset used when no config file is given")
      ->check(CLI::IsMember({"paper", "desk"}));
}

RepoConfig resolve_config(const ConfigArgs& args) {
  if (!args.config_path.empty()) return load_config(args.config_path);
  if (auto env = default_config_path()) return load_config(*env);
  RepoConfig cfg = preset_config(args.preset);
  cfg.validate();
  return cfg;
}

Dataset open_dataset(const std::string& dir) {
  spdlog::info("loading dataset {}", dir);
  return load_dataset(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void write_summary(const fs::path& path, const std::vector<EvalReport>& reports) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : reports) {
    const EvalSummary s = r.summary();
    doc.push_back({{"condition", r.condition},
                   {"path_kind", to_string(r.path_kind)},
                   {"with_mr", r.with_mr},
                   {"count", s.count},
                   {"si_sdr", s.si_sdr},
                   {"si_sdr_mixture", s.si_sdr_mixture},
                   {"si_sdr_improvement", s.si_sdr_improvement},
                   {"spectral_mse", s.spectral_mse},
                   {"spk_sim_ref", s.spk_sim_ref},
                   {"spk_sim_enroll", s.spk_sim_enroll},
                   {"spk_sim_cross", s.spk_sim_cross},
                   {"tau_abs_error", s.tau_abs_error}});
  }
  write_text(path, doc.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-step target-signal extraction with mean-velocity transport"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  // init
  auto* init = app.add_subcommand("init", "Write a preset config file");
  std::string init_preset = "desk", init_out = "config.json";
  init->add_option("--preset", init_preset)->check(CLI::IsMember({"paper", "desk"}));
  init->add_option("-o,--out", init_out);

  // gen-data
  ConfigArgs gen_cfg;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic mixture dataset");
  add_config_options(gen, gen_cfg);
  std::optional<std::uint64_t> gen_seed;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Dataset seed (default: config seed)");
  gen->add_option("-o,--out", gen_out)->required();

  // train
  ConfigArgs train_cfg;
  auto* tr = app.add_subcommand("train", "Train a velocity model");
  add_config_options(tr, train_cfg);
  std::string train_data, train_out, train_kind, train_resume;
  int train_stop = 0;
  tr->add_option("--data", train_data)->required();
  tr->add_option("-o,--out", train_out)->required();
  tr->add_option("--path-kind", train_kind, "mixture_to_target | background_to_target (default: config)");
  tr->add_option("--resume", train_resume, "Checkpoint to resume from");
  tr->add_option("--stop-after-epoch", train_stop, "Stop once this many epochs are complete");

  // train-mr
  ConfigArgs mr_cfg;
  auto* trm = app.add_subcommand("train-mr", "Train the mixing-ratio regressor");
  add_config_options(trm, mr_cfg);
  std::string mr_data, mr_out;
  trm->add_option("--data", mr_data)->required();
  trm->add_option("-o,--out", mr_out)->required();

  // extract
  auto* ext = app.add_subcommand("extract", "One-step extraction of the enrolled speaker");
  std::string ext_ckpt, ext_mix, ext_enroll, ext_out, ext_mr_ckpt, ext_dump;
  std::optional<double> ext_tau;
  std::optional<Eigen::Index> ext_chunk;
  bool ext_mr = false;
  ext->add_option("--checkpoint", ext_ckpt)->required();
  ext->add_option("--mixture", ext_mix)->required();
  ext->add_option("--enrollment", ext_enroll)->required();
  ext->add_option("-o,--out", ext_out)->required();
  ext->add_flag("--mr,!--no-mr", ext_mr, "Start the jump from the predicted mixing ratio");
  ext->add_option("--mr-checkpoint", ext_mr_ckpt);
  ext->add_option("--tau", ext_tau, "Force the start coordinate (overrides the MR predictor)")
      ->check(CLI::Range(0.0, 1.0));
  ext->add_option("--chunk-frames", ext_chunk, "Frames per chunk (0 = whole utterance)");
  ext->add_option("--dump-spectrogram", ext_dump, "Also write the estimated spectrogram");

  // eval
  ConfigArgs eval_cfg;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  add_config_options(ev, eval_cfg);
  std::string ev_ckpt, ev_bg, ev_mr, ev_data, ev_out, ev_split = "test", ev_mode = "standard";
  std::optional<std::size_t> ev_max;
  std::optional<int> ev_workers;
  ev->add_option("--checkpoint", ev_ckpt, "Velocity checkpoint (mixture-to-target model in ablation mode)");
  ev->add_option("--bg-checkpoint", ev_bg, "Background-to-target checkpoint (ablation mode)");
  ev->add_option("--mr-checkpoint", ev_mr);
  ev->add_option("--data", ev_data)->required();
  ev->add_option("-o,--out", ev_out)->required();
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--mode", ev_mode)->check(CLI::IsMember({"standard", "reference", "ablation"}));
  ev->add_option("--max-examples", ev_max);
  ev->add_option("--workers", ev_workers);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*init) {
      save_config(init_out, preset_config(init_preset));
      spdlog::info("wrote {} ({} preset)", init_out, init_preset);
    } else if (*gen) {
      const RepoConfig cfg = resolve_config(gen_cfg);
      const std::uint64_t seed = gen_seed.value_or(cfg.seed);
      const Dataset ds = generate_dataset(cfg.data, seed);
      write_dataset(ds, gen_out);
      spdlog::info("wrote {} train / {} val / {} test examples to {}", ds.train.size(), ds.val.size(),
                   ds.test.size(), gen_out);
    } else if (*tr) {
      RepoConfig cfg = resolve_config(train_cfg);
      if (!train_kind.empty()) cfg.train.path_kind = path_kind_from_string(train_kind);
      const Dataset ds = open_dataset(train_data);
      const UDiTBackbone model(cfg.predictor);
      TrainRunOptions run;
      run.out_dir = fs::path(train_out);
      if (!train_resume.empty()) run.resume_from = fs::path(train_resume);
      run.stop_after_epoch = train_stop;
      run.stft = cfg.stft;
      run.config_snapshot = config_to_json(cfg);
      run.config_snapshot["train"]["path_kind"] = to_string(cfg.train.path_kind);
      run.config_snapshot["dataset_dir"] = train_data;
      const TrainResult res = train(model, cfg.train, ds.train, ds.val, run);
      spdlog::info("finished: {} steps, {} skipped, checkpoint {}", res.steps, res.skipped,
                   res.last_checkpoint ? res.last_checkpoint->string() : "-");
    } else if (*trm) {
      const RepoConfig cfg = resolve_config(mr_cfg);
      const Dataset ds = open_dataset(mr_data);
      const MrRegressor model(cfg.mr);
      nlohmann::json snapshot = config_to_json(cfg);
      snapshot["dataset_dir"] = mr_data;
      const MrTrainResult res = train_mr(model, cfg.mr_train, ds.train, ds.val, fs::path(mr_out), snapshot);
      std::cout << "val_mae " << res.val_mae << "\nval_mse " << res.val_mse << '\n';
    } else if (*ext) {
      const LoadedVelocityModel vm = load_velocity_model(ext_ckpt);
      std::optional<LoadedMrModel> mr;
      if (ext_mr && !ext_tau) {
        if (ext_mr_ckpt.empty()) throw ValidationError("--mr needs --mr-checkpoint (or --tau)");
        mr = load_mr_model(ext_mr_ckpt);
      }
      Extractor ex{vm.model.get(), &vm.params};
      if (mr) {
        ex.mr = mr->model.get();
        ex.mr_params = &mr->params;
      }
      InferenceConfig icfg;
      icfg.stft = vm.stft;
      icfg.use_mr = ext_mr;
      icfg.forced_tau = ext_tau;
      if (ext_chunk) icfg.chunk_frames = *ext_chunk;
      const Waveform y = read_wav(ext_mix);
      const Waveform e = read_wav(ext_enroll);
      const UtteranceResult res = extract_utterance(ex, y, e, icfg);
      write_wav(ext_out, res.estimate, WavEncoding::Float32);
      if (!ext_dump.empty()) write_spectrogram(ext_dump, res.spectrum);
      spdlog::info("extracted {} samples in {} chunk(s), start coordinate {:.4f}", res.estimate.size(), res.chunks,
                   res.tau);
    } else if (*ev) {
      const RepoConfig cfg = resolve_config(eval_cfg);
      const Dataset ds = open_dataset(ev_data);
      const auto& examples = ds.split(split_from_string(ev_split));
      fs::create_directories(ev_out);
      EvalOptions opts;
      opts.inference = cfg.inference;
      opts.max_examples = ev_max.value_or(cfg.eval.max_examples);
      opts.workers = static_cast<std::size_t>(ev_workers.value_or(cfg.eval.workers));

      std::optional<LoadedMrModel> mr;
      if (!ev_mr.empty()) mr = load_mr_model(ev_mr);
      const auto attach = [&](Extractor& ex) {
        if (mr) {
          ex.mr = mr->model.get();
          ex.mr_params = &mr->params;
        }
      };

      if (ev_mode == "reference") {
        const std::vector<EvalReport> reps{evaluate_reference(examples, opts)};
        write_report_tsv(fs::path(ev_out) / "rows.tsv", reps);
        write_summary(fs::path(ev_out) / "summary.json", reps);
        std::cout << "reference SI-SDR " << reps[0].summary().si_sdr << " dB over " << reps[0].rows.size()
                  << " examples\n";
      } else if (ev_mode == "standard") {
        if (ev_ckpt.empty()) throw ValidationError("eval: --checkpoint is required");
        const LoadedVelocityModel vm = load_velocity_model(ev_ckpt);
        Extractor ex{vm.model.get(), &vm.params};
        attach(ex);
        opts.inference.stft = vm.stft;
        TauChoice tau = TauChoice::zero();
        std::string condition = "w/o MR";
        if (vm.path_kind == PathKind::BackgroundToTarget) {
          tau = ex.has_mr() ? TauChoice::predicted() : TauChoice::oracle();
          condition = ex.has_mr() ? "w/ MR" : "tau*";
        }
        const std::vector<EvalReport> reps{evaluate(ex, vm.path_kind, examples, tau, condition, opts)};
        write_report_tsv(fs::path(ev_out) / "rows.tsv", reps);
        write_summary(fs::path(ev_out) / "summary.json", reps);
        const EvalSummary s = reps[0].summary();
        std::cout << "SI-SDR " << s.si_sdr << " dB (mixture " << s.si_sdr_mixture << " dB, improvement "
                  << s.si_sdr_improvement << " dB), spk_sim " << s.spk_sim_ref << " vs cross " << s.spk_sim_cross
                  << ", n=" << s.count << '\n';
      } else {
        if (ev_ckpt.empty() || ev_bg.empty()) {
          throw ValidationError("eval --mode ablation needs --checkpoint (mixture-to-target) and --bg-checkpoint");
        }
        const LoadedVelocityModel m2t = load_velocity_model(ev_ckpt);
        const LoadedVelocityModel bg = load_velocity_model(ev_bg);
        if (m2t.path_kind != PathKind::MixtureToTarget || bg.path_kind != PathKind::BackgroundToTarget) {
          throw ValidationError("eval --mode ablation: checkpoint path kinds do not match their flags");
        }
        Extractor m2t_ex{m2t.model.get(), &m2t.params};
        Extractor bg_ex{bg.model.get(), &bg.params};
        attach(bg_ex);
        SensitivityOptions sopts;
        sopts.eval = opts;
        sopts.eval.inference.stft = m2t.stft;
        sopts.offsets = cfg.eval.tau_offsets;
        const SensitivityReport rep = mr_sensitivity_report(m2t_ex, bg_ex, examples, sopts);
        const std::string table = format_ablation_table(rep);
        write_text(fs::path(ev_out) / "ablation.txt", table);
        write_ablation_tsv(fs::path(ev_out) / "ablation.tsv", rep);
        write_sweep_tsv(fs::path(ev_out) / "sweep.tsv", rep);
        std::vector<EvalReport> all;
        for (const auto& b : rep.blocks) {
          all.push_back(b.with_mr);
          all.push_back(b.without_mr);
        }
        all.insert(all.end(), rep.extra.begin(), rep.extra.end());
        write_report_tsv(fs::path(ev_out) / "rows.tsv", all);
        write_summary(fs::path(ev_out) / "summary.json", all);
        std::cout << table;
      }
    }
  } catch (const ValidationError& e) {
    spdlog::error("invalid input: {}", e.what());
    return 2;
  } catch (const IoError& e) {
    spdlog::error("I/O error: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
