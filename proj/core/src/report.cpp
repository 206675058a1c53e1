#include "xferctl/report.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "xferctl/numeric.hpp"

namespace xferctl::harness {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

ordered_json identification_to_json(const IdentificationRecord& rec) {
  const auto report_json = [](const sysid::IdentificationReport& r) {
    ordered_json j;
    j["a"] = matrix_to_json(r.dynamics.a);
    j["b"] = matrix_to_json(r.dynamics.b);
    j["dt"] = r.dynamics.dt;
    j["residual_rms"] = r.residual_rms;
    j["condition_number"] =
        std::isfinite(r.condition_number) ? ordered_json(r.condition_number)
                                          : ordered_json("inf");
    j["sample_count"] = r.sample_count;
    j["rank_deficient"] = r.rank_deficient;
    return j;
  };
  ordered_json j;
  j["seed"] = rec.seed;
  j["source"] = report_json(rec.source);
  j["target"] = report_json(rec.target);
  j["match_residual"] = rec.match_residual;
  j["composed_a_error"] = rec.composed_a_error;
  j["composed_b_error"] = rec.composed_b_error;
  j["a_rank_deficient"] = rec.a_rank_deficient;
  return j;
}

}  // namespace

std::string report_to_json(const TransferReport& report) {
  ordered_json j;
  j["system"] = report.system;
  j["family"] = to_string(report.family);
  j["fault_mode"] = to_string(report.fault_mode);
  j["seeds"] = report.seeds;
  j["eval_episodes"] = report.eval_episodes;
  j["horizon"] = report.horizon;

  ordered_json variants;
  for (const auto& [variant, stats] : report.variants) {
    ordered_json v;
    v["mean"] = stats.mean;
    v["stddev"] = stats.stddev;
    v["n_episodes"] = stats.n_episodes;
    v["per_seed_mean"] = stats.per_seed_mean;
    variants[to_string(variant)] = v;
  }
  j["variants"] = variants;

  ordered_json jumpstart;
  for (const auto& [variant, value] : report.jumpstart) {
    jumpstart[to_string(variant)] = value;
  }
  j["jumpstart"] = jumpstart;

  ordered_json asymptotic;
  for (const auto& [variant, value] : report.asymptotic) {
    asymptotic[to_string(variant)] = value;
  }
  j["asymptotic"] = asymptotic;

  ordered_json ttt;
  for (const auto& [variant, value] : report.time_to_threshold) {
    ttt[to_string(variant)] =
        value.has_value() ? ordered_json(*value) : ordered_json("not reached");
  }
  j["time_to_threshold"] = ttt;
  j["threshold"] = report.threshold;

  j["match_residuals"] = report.match_residuals;
  ordered_json ident = ordered_json::array();
  for (const auto& rec : report.identification) {
    ident.push_back(identification_to_json(rec));
  }
  j["identification"] = ident;
  j["fault_env_step"] = report.fault_env_step;
  j["notes"] = report.notes;
  return j.dump(2) + "\n";
}

std::string report_to_text(const TransferReport& report) {
  std::ostringstream out;
  out << "transfer report: " << report.system << " (" << to_string(report.family)
      << " family, " << to_string(report.fault_mode) << " fault)\n";
  out << std::left << std::setw(12) << "variant" << std::right << std::setw(16)
      << "mean" << std::setw(14) << "std" << std::setw(8) << "n" << std::setw(16)
      << "jumpstart" << '\n';
  for (const auto& [variant, stats] : report.variants) {
    out << std::left << std::setw(12) << to_string(variant) << std::right
        << std::fixed << std::setprecision(3) << std::setw(16) << stats.mean
        << std::setw(14) << stats.stddev << std::setw(8) << stats.n_episodes;
    const auto it = report.jumpstart.find(variant);
    if (it != report.jumpstart.end()) {
      out << std::setw(16) << it->second;
    }
    out << '\n';
    out.unsetf(std::ios::fixed);
  }
  if (!report.match_residuals.empty()) {
    out << "matching residual rho per seed:";
    for (const double r : report.match_residuals) out << ' ' << format_double(r);
    out << '\n';
  }
  for (const auto& rec : report.identification) {
    out << "seed " << rec.seed
        << ": id residual source=" << format_double(rec.source.residual_rms)
        << " target=" << format_double(rec.target.residual_rms)
        << " composed errors A=" << format_double(rec.composed_a_error)
        << " B=" << format_double(rec.composed_b_error) << '\n';
  }
  for (const auto& note : report.notes) {
    out << "note: " << note << '\n';
  }
  return out.str();
}

std::string curves_to_csv(const TransferReport& report) {
  std::ostringstream out;
  out << "# xferctl-curves v1\n";
  out << "variant,seed,iteration,env_steps,timeline_steps,mean_reward,reward_std,"
         "entropy,episodes\n";
  for (const auto& rec : report.curves) {
    for (std::size_t i = 0; i < rec.curve.size(); ++i) {
      const auto& pt = rec.curve[i];
      out << to_string(rec.variant) << ',' << rec.seed << ',' << i << ','
          << pt.env_steps << ',' << (rec.start_env_step + pt.env_steps) << ','
          << format_double(pt.mean_reward) << ',' << format_double(pt.reward_std)
          << ',' << format_double(pt.entropy) << ',' << pt.episodes << '\n';
    }
  }
  return out.str();
}

std::string table_to_csv(const std::string& preset,
                         const std::vector<TransferReport>& reports) {
  std::ostringstream out;
  out << "# xferctl-table v1 preset=" << preset << '\n';
  out << "system,variant,mean_reward,reward_std,n_episodes\n";
  for (const auto& report : reports) {
    for (const auto& [variant, stats] : report.variants) {
      out << report.system << ',' << to_string(variant) << ','
          << format_double(stats.mean) << ',' << format_double(stats.stddev)
          << ',' << stats.n_episodes << '\n';
    }
  }
  return out.str();
}

std::string table_to_json(const std::string& preset,
                          const std::vector<TransferReport>& reports) {
  ordered_json j;
  j["preset"] = preset;
  ordered_json rows = ordered_json::array();
  for (const auto& report : reports) {
    for (const auto& [variant, stats] : report.variants) {
      ordered_json row;
      row["system"] = report.system;
      row["variant"] = to_string(variant);
      row["mean_reward"] = stats.mean;
      row["reward_std"] = stats.stddev;
      row["n_episodes"] = stats.n_episodes;
      rows.push_back(row);
    }
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace xferctl::harness
