#include "aftse/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <spdlog/spdlog.h>

#include "aftse/errors.hpp"
#include "aftse/objective.hpp"

namespace aftse {

double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& est, const Eigen::Ref<const Eigen::VectorXd>& ref,
              double ceiling) {
  if (est.size() != ref.size()) throw LengthError("si_sdr: estimate and reference lengths differ");
  const double ref_energy = ref.squaredNorm();
  if (!(ref_energy > 0.0)) throw ValidationError("si_sdr: reference is all zero");
  if (!est.allFinite()) throw ValidationError("si_sdr: non-finite estimate");
  const double scale = est.dot(ref) / ref_energy;
  const double target = scale * scale * ref_energy;
  const double residual = (est - scale * ref).squaredNorm();
  if (target <= residual * std::pow(10.0, -ceiling / 10.0)) return -ceiling;
  if (residual <= target * std::pow(10.0, -ceiling / 10.0)) return ceiling;
  return 10.0 * std::log10(target / residual);
}

double si_sdr(const Waveform& est, const Waveform& ref, double ceiling) {
  return si_sdr(est.samples, ref.samples, ceiling);
}

Eigen::VectorXd speaker_embedding(const Waveform& w) {
  static const StftConfig cfg{126, 32, WindowKind::PeriodicHann};
  if (w.size() == 0) throw ValidationError("speaker_embedding: empty input");
  Eigen::VectorXd x = w.samples;
  if (x.size() < cfg.n_fft) {
    x.conservativeResize(cfg.n_fft);
    x.tail(cfg.n_fft - w.size()).setZero();
  }
  const Eigen::MatrixXd mag = magnitude(stft(x, cfg));
  const double peak = mag.maxCoeff();
  if (!(peak > 0.0)) return Eigen::VectorXd::Zero(64);
  // Drop the Nyquist bin so the embedding has exactly 64 entries.
  const Eigen::MatrixXd logmag = (mag.topRows(64).array() + 1e-3 * peak).log().matrix();
  Eigen::VectorXd emb = logmag.rowwise().mean();
  emb.array() -= emb.mean();
  const double n = emb.norm();
  return n > 0.0 ? Eigen::VectorXd(emb / n) : Eigen::VectorXd::Zero(64);
}

double spk_sim(const Waveform& est, const Waveform& anchor) {
  const Eigen::VectorXd a = speaker_embedding(est);
  const Eigen::VectorXd b = speaker_embedding(anchor);
  if (a.isZero(0.0) || b.isZero(0.0)) {
    spdlog::warn("spk_sim: silent input, similarity defined as 0");
    return 0.0;
  }
  return std::clamp(a.dot(b), -1.0, 1.0);
}

double spectral_mse(const Spectrogram& est, const Spectrogram& ref) {
  detail::require_same_shape(est, ref, "spectral_mse");
  return per_sample_mse(est - ref);
}

EvalSummary EvalReport::summary() const {
  EvalSummary s;
  s.count = rows.size();
  if (rows.empty()) return s;
  for (const auto& r : rows) {
    s.si_sdr += r.si_sdr;
    s.si_sdr_mixture += r.si_sdr_mixture;
    s.si_sdr_improvement += r.si_sdr_improvement;
    s.spectral_mse += r.spectral_mse;
    s.spk_sim_ref += r.spk_sim_ref;
    s.spk_sim_enroll += r.spk_sim_enroll;
    s.spk_sim_cross += r.spk_sim_cross;
    s.tau_abs_error += std::abs(r.tau_used - r.tau_star);
  }
  const double n = static_cast<double>(rows.size());
  for (double* v : {&s.si_sdr, &s.si_sdr_mixture, &s.si_sdr_improvement, &s.spectral_mse, &s.spk_sim_ref,
                    &s.spk_sim_enroll, &s.spk_sim_cross, &s.tau_abs_error}) {
    *v /= n;
  }
  return s;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(10);
  return out;
}

double pct_change(double without, double with) {
  return with == 0.0 ? 0.0 : (without - with) / std::abs(with) * 100.0;
}

}  // namespace

void write_report_tsv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  auto out = open_out(path);
  out << "condition\tpath_kind\twith_mr\tid\ttarget_speaker\tinterferer_speaker\ttau_star\ttau_used\tsi_sdr\t"
         "si_sdr_mixture\tsi_sdr_improvement\tspectral_mse\tspk_sim_ref\tspk_sim_enroll\tspk_sim_cross\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      out << rep.condition << '\t' << to_string(rep.path_kind) << '\t' << (rep.with_mr ? 1 : 0) << '\t' << r.id
          << '\t' << r.target_speaker << '\t' << r.interferer_speaker << '\t' << r.tau_star << '\t' << r.tau_used
          << '\t' << r.si_sdr << '\t' << r.si_sdr_mixture << '\t' << r.si_sdr_improvement << '\t'
          << r.spectral_mse << '\t' << r.spk_sim_ref << '\t' << r.spk_sim_enroll << '\t' << r.spk_sim_cross
          << '\n';
    }
  }
}

double AblationBlock::si_sdr_decline() const { return without_mr.summary().si_sdr - with_mr.summary().si_sdr; }

double AblationBlock::spk_sim_decline_pct() const {
  return pct_change(without_mr.summary().spk_sim_ref, with_mr.summary().spk_sim_ref);
}

double AblationBlock::spectral_mse_change_pct() const {
  return pct_change(without_mr.summary().spectral_mse, with_mr.summary().spectral_mse);
}

std::string format_ablation_table(const SensitivityReport& report) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(28) << "Model / condition" << std::right << std::setw(12) << "SI-SDR" << std::setw(12)
     << "SI-SDRi" << std::setw(12) << "SpkSim" << std::setw(14) << "Spec. MSE" << std::setw(8) << "N" << '\n';
  for (const auto& b : report.blocks) {
    for (const EvalReport* rep : {&b.with_mr, &b.without_mr}) {
      const EvalSummary s = rep->summary();
      os << std::left << std::setw(28) << (b.model + " " + rep->condition) << std::right << std::setprecision(2)
         << std::setw(12) << s.si_sdr << std::setw(12) << s.si_sdr_improvement << std::setprecision(3)
         << std::setw(12) << s.spk_sim_ref << std::setprecision(5) << std::setw(14) << s.spectral_mse
         << std::setw(8) << s.count << '\n';
    }
    os << std::left << std::setw(28) << (b.model + " relative decline") << std::right << std::setprecision(2)
       << std::setw(12) << b.si_sdr_decline() << std::setw(12) << "" << std::setw(11) << b.spk_sim_decline_pct()
       << '%' << std::setw(13) << b.spectral_mse_change_pct() << '%' << '\n';
  }
  return os.str();
}

void write_ablation_tsv(const std::filesystem::path& path, const SensitivityReport& report) {
  auto out = open_out(path);
  out << "model\trow\tsi_sdr_db\tsi_sdr_improvement_db\tspk_sim\tspectral_mse\tcount\n";
  for (const auto& b : report.blocks) {
    for (const EvalReport* rep : {&b.with_mr, &b.without_mr}) {
      const EvalSummary s = rep->summary();
      out << b.model << '\t' << rep->condition << '\t' << s.si_sdr << '\t' << s.si_sdr_improvement << '\t'
          << s.spk_sim_ref << '\t' << s.spectral_mse << '\t' << s.count << '\n';
    }
    // Decline row: SI-SDR in dB, the rest in percent.
    out << b.model << "\trelative_decline\t" << b.si_sdr_decline() << "\t\t" << b.spk_sim_decline_pct() << "%\t"
        << b.spectral_mse_change_pct() << "%\t\n";
  }
}

void write_sweep_tsv(const std::filesystem::path& path, const SensitivityReport& report) {
  auto out = open_out(path);
  out << "series\tx\ty\n";
  for (const auto& p : report.sweep) out << p.series << '\t' << p.x << '\t' << p.y << '\n';
}

}  // namespace aftse
