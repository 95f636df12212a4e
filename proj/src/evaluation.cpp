#include "aftse/evaluation.hpp"

#include <algorithm>
#include <cstdio>

#include "aftse/errors.hpp"
#include "aftse/parallel.hpp"

namespace aftse {

namespace {

std::string example_id(const MixtureExample& ex, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", to_string(ex.split), i);
  return buf;
}

std::size_t limit(const std::vector<MixtureExample>& examples, const EvalOptions& opts) {
  return opts.max_examples == 0 ? examples.size() : std::min(opts.max_examples, examples.size());
}

EvalRow score(const MixtureExample& ex, std::size_t i, const Waveform& est, const Spectrogram& est_spec,
              double tau_used, const StftConfig& stft_cfg) {
  EvalRow row;
  row.id = example_id(ex, i);
  row.target_speaker = ex.target_speaker;
  row.interferer_speaker = ex.interferer_speaker;
  row.tau_star = ex.tau_star;
  row.tau_used = tau_used;
  row.si_sdr = si_sdr(est, ex.target);
  row.si_sdr_mixture = si_sdr(ex.mixture, ex.target);
  row.si_sdr_improvement = row.si_sdr - row.si_sdr_mixture;
  row.spectral_mse = spectral_mse(est_spec, stft(ex.target, stft_cfg));
  row.spk_sim_ref = spk_sim(est, ex.target);
  row.spk_sim_enroll = spk_sim(est, ex.enrollment);
  row.spk_sim_cross = spk_sim(est, ex.background);
  return row;
}

}  // namespace

EvalReport evaluate(const Extractor& ex, PathKind kind, const std::vector<MixtureExample>& examples,
                    TauChoice tau, std::string condition, const EvalOptions& opts) {
  opts.inference.validate();
  if (ex.model == nullptr || ex.params == nullptr) throw ValidationError("evaluate: missing model");
  if (tau.kind == TauChoice::Kind::Predicted && !ex.has_mr()) {
    throw ValidationError("evaluate: predicted tau requested without an MR regressor");
  }
  EvalReport rep;
  rep.condition = std::move(condition);
  rep.path_kind = kind;
  rep.with_mr = tau.kind == TauChoice::Kind::Predicted;
  const std::size_t n = limit(examples, opts);
  rep.rows.resize(n);
  parallel_for(n, opts.workers, [&](std::size_t i) {
    const MixtureExample& m = examples[i];
    InferenceConfig cfg = opts.inference;
    cfg.use_mr = false;
    cfg.forced_tau.reset();
    switch (tau.kind) {
      case TauChoice::Kind::Zero:
        cfg.forced_tau = 0.0;
        break;
      case TauChoice::Kind::Predicted:
        cfg.use_mr = true;
        break;
      case TauChoice::Kind::Oracle:
        cfg.forced_tau = std::clamp(m.tau_star + tau.value, 0.0, 1.0);
        break;
      case TauChoice::Kind::Fixed:
        cfg.forced_tau = tau.value;
        break;
    }
    const UtteranceResult res = extract_utterance(ex, m.mixture, m.enrollment, cfg);
    rep.rows[i] = score(m, i, res.estimate, res.spectrum, res.tau, cfg.stft);
  });
  return rep;
}

EvalReport evaluate_reference(const std::vector<MixtureExample>& examples, const EvalOptions& opts) {
  EvalReport rep;
  rep.condition = "reference";
  const std::size_t n = limit(examples, opts);
  rep.rows.resize(n);
  parallel_for(n, opts.workers, [&](std::size_t i) {
    const MixtureExample& m = examples[i];
    rep.rows[i] = score(m, i, m.target, stft(m.target, opts.inference.stft), m.tau_star, opts.inference.stft);
  });
  return rep;
}

SensitivityReport mr_sensitivity_report(const Extractor& mixture_model, const Extractor& background_model,
                                        const std::vector<MixtureExample>& examples,
                                        const SensitivityOptions& opts) {
  if (mixture_model.model == nullptr || background_model.model == nullptr) {
    throw ValidationError("mr_sensitivity_report: both path-kind models are required");
  }
  if (examples.empty()) throw ValidationError("mr_sensitivity_report: no examples");
  SensitivityReport out;

  AblationBlock m2t;
  m2t.model = "mixture-to-target";
  m2t.with_mr = evaluate(mixture_model, PathKind::MixtureToTarget, examples, TauChoice::zero(), "w/ MR", opts.eval);
  m2t.without_mr = m2t.with_mr;
  m2t.without_mr.condition = "w/o MR";
  out.blocks.push_back(std::move(m2t));

  AblationBlock bg;
  bg.model = "background-to-target";
  const TauChoice with = background_model.has_mr() ? TauChoice::predicted() : TauChoice::oracle();
  bg.with_mr = evaluate(background_model, PathKind::BackgroundToTarget, examples, with, "w/ MR", opts.eval);
  bg.without_mr =
      evaluate(background_model, PathKind::BackgroundToTarget, examples, TauChoice::zero(), "w/o MR", opts.eval);
  out.blocks.push_back(std::move(bg));

  for (double offset : opts.offsets) {
    EvalReport rep = evaluate(background_model, PathKind::BackgroundToTarget, examples, TauChoice::oracle(offset),
                              "tau*" + std::string(offset < 0 ? "" : "+") + std::to_string(offset), opts.eval);
    out.sweep.push_back({"background-to-target", offset, rep.summary().si_sdr});
    if (offset == 0.0) {
      rep.condition = "tau*";
      out.extra.push_back(std::move(rep));
    }
  }
  if (out.extra.empty()) {
    out.extra.push_back(
        evaluate(background_model, PathKind::BackgroundToTarget, examples, TauChoice::oracle(), "tau*", opts.eval));
  }
  return out;
}

}  // namespace aftse
