#include "mstream/run_config.hpp"

#include <set>

namespace mstream {

QcOptions QcOptions::from_config(const Config& cfg) {
  QcOptions q;
  q.threshold = cfg.get_double("qc", "threshold", q.threshold);
  q.r_squared = r_squared_kind_from_string(cfg.get("qc", "r_squared", to_string(q.r_squared)));
  if (!(q.threshold >= 0)) throw ConfigError("qc.threshold must be non-negative");
  return q;
}

void QcOptions::write(Config& cfg) const {
  cfg.set("qc", "threshold", format_double(threshold));
  cfg.set("qc", "r_squared", to_string(r_squared));
}

RunConfig RunConfig::from_config(const Config& cfg) {
  const Config known = RunConfig{}.to_config();
  for (const auto& section : cfg.sections()) {
    for (const auto& [key, value] : cfg.entries(section)) {
      if (!known.has(section, key)) throw ConfigError("unknown configuration key '" + section + "." + key + "'");
    }
  }
  RunConfig r;
  r.seed = static_cast<std::uint64_t>(cfg.get_int("run", "seed", 0));
  r.out_dir = cfg.get("run", "out_dir", "");
  r.model = ModelConfig::from_config(cfg);
  r.train = TrainConfig::from_config(cfg);
  r.eval = EvalOptions::from_config(cfg);
  r.logistic = LogisticOptions::from_config(cfg);
  r.synthetic = SyntheticParams::from_config(cfg);
  r.qc = QcOptions::from_config(cfg);
  return r;
}

Config RunConfig::to_config() const {
  Config cfg;
  cfg.set("run", "seed", std::to_string(seed));
  cfg.set("run", "out_dir", out_dir.string());
  model.write(cfg);
  train.write(cfg);
  eval.write(cfg);
  logistic.write(cfg);
  synthetic.write(cfg);
  qc.write(cfg);
  return cfg;
}

std::string RunConfig::resolved() const { return to_config().serialize(); }

void apply_overrides(Config& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
      throw ConfigError("override '" + o + "' is not of the form section.key=value");
    }
    cfg.set(o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
  }
}

std::filesystem::path resolve_output(const std::filesystem::path& out, const std::filesystem::path& root) {
  if (out.is_absolute() || root.empty()) return out;
  return root / out;
}

}  // namespace mstream
