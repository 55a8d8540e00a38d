#include "mstream/evaluation.hpp"

#include "mstream/params.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace mstream {

namespace {

// Largest-remainder apportionment of total across weights (ties to the
// lower index).
std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights) {
  const double sum = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::size_t{0}));
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    given += out[i];
    rem.push_back({exact - static_cast<double>(out[i]), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < total; ++k, ++given) ++out[rem[k % rem.size()].second];
  return out;
}

}  // namespace

Split split_dataset(const std::vector<int>& labels, std::uint64_t seed, const SplitRatios& r, bool stratify) {
  if (r.train < 0 || r.validation <= 0 || r.test <= 0 || std::abs(r.train + r.validation + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  const std::size_t n = labels.size();
  if (n < 5) throw DataError("split_dataset: need at least 5 records, got " + std::to_string(n));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.validation));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.test));
  if (n_val + n_test >= n) throw DataError("split_dataset: no records left for training");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

  Rng rng(seed);
  Split out;
  if (stratify) {
    std::vector<std::size_t> counts;
    for (auto& [label, idx] : by_class) counts.push_back(idx.size());
    const auto val_share = apportion(n_val, counts);
    const auto test_share = apportion(n_test, counts);
    std::size_t c = 0;
    for (auto& [label, idx] : by_class) {
      if (val_share[c] + test_share[c] >= idx.size()) {
        throw StratificationError("class " + std::to_string(label) + " has too few records (" +
                                  std::to_string(idx.size()) + ") to appear in every split");
      }
      std::shuffle(idx.begin(), idx.end(), rng);
      auto it = idx.begin();
      out.validation.insert(out.validation.end(), it, it + static_cast<std::ptrdiff_t>(val_share[c]));
      it += static_cast<std::ptrdiff_t>(val_share[c]);
      out.test.insert(out.test.end(), it, it + static_cast<std::ptrdiff_t>(test_share[c]));
      it += static_cast<std::ptrdiff_t>(test_share[c]);
      out.train.insert(out.train.end(), it, idx.end());
      ++c;
    }
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    out.validation.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_val),
                    all.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    out.train.assign(all.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), all.end());
  }
  for (auto* part : {&out.train, &out.validation, &out.test}) std::sort(part->begin(), part->end());
  for (const auto& [label, idx] : by_class) {
    const char* names[] = {"train", "validation", "test"};
    int k = 0;
    for (const auto* part : {&out.train, &out.validation, &out.test}) {
      const bool present = std::any_of(part->begin(), part->end(), [&, l = label](std::size_t i) { return labels[i] == l; });
      if (!present) {
        throw StratificationError(std::string("class ") + std::to_string(label) + " is absent from the " + names[k] +
                                  " split (n = " + std::to_string(n) + ")");
      }
      ++k;
    }
  }
  return out;
}

EvalOptions EvalOptions::from_config(const Config& cfg) {
  EvalOptions o;
  o.repeats = cfg.get_int("eval", "repeats", o.repeats);
  o.seed_base = static_cast<std::uint64_t>(cfg.get_int("eval", "seed_base", static_cast<int>(o.seed_base)));
  o.threshold = cfg.get_double("eval", "threshold", o.threshold);
  o.jobs = cfg.get_int("eval", "jobs", o.jobs);
  o.stratify = cfg.get_bool("eval", "stratify", o.stratify);
  o.validate();
  return o;
}

void EvalOptions::write(Config& cfg) const {
  cfg.set("eval", "repeats", std::to_string(repeats));
  cfg.set("eval", "seed_base", std::to_string(seed_base));
  cfg.set("eval", "threshold", format_double(threshold));
  cfg.set("eval", "jobs", std::to_string(jobs));
  cfg.set("eval", "stratify", stratify ? "true" : "false");
}

void EvalOptions::validate() const {
  if (repeats < 2) throw ConfigError("eval.repeats must be at least 2");
  if (jobs < 1) throw ConfigError("eval.jobs must be at least 1");
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("eval.threshold must lie in [0, 1]");
}

int median_auc_repeat(const std::vector<double>& aucs) {
  if (aucs.empty()) throw ContractError("median of no repeats");
  std::vector<int> order(aucs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return aucs[a] < aucs[b]; });
  return order[(order.size() - 1) / 2];
}

EvalReport summarize_repeats(const std::string& name, const EvalOptions& options, std::vector<RepeatOutcome> outcomes) {
  EvalReport rep;
  rep.name = name;
  rep.threshold = options.threshold;
  rep.seed_base = options.seed_base;
  std::vector<double> aucs, accs, sens, spes;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    const auto& o = outcomes[r];
    RepeatMetrics m;
    m.repeat = static_cast<int>(r);
    m.seed = options.seed_base + r;
    m.auc = auc(o.scores, o.labels);
    const auto cm = compute_metrics(o.scores, o.labels, options.threshold);
    m.acc = cm.acc;
    m.sen = cm.sen;
    m.spe = cm.spe;
    rep.repeats.push_back(m);
    aucs.push_back(m.auc);
    accs.push_back(m.acc);
    sens.push_back(m.sen);
    spes.push_back(m.spe);
  }
  rep.auc = percentile_interval(aucs);
  rep.acc = percentile_interval(accs);
  rep.sen = percentile_interval(sens);
  rep.spe = percentile_interval(spes);
  rep.median_repeat = median_auc_repeat(aucs);
  rep.outcomes = std::move(outcomes);
  return rep;
}

EvalReport repeated_eval(const std::string& name, const EvalOptions& options, const RepeatFn& fn) {
  options.validate();
  const auto n = static_cast<std::size_t>(options.repeats);
  std::vector<RepeatOutcome> outcomes(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < n;) {
      try {
        outcomes[r] = fn(static_cast<int>(r), options.seed_base + r);
      } catch (const std::exception& e) {
        errors[r] = e.what();
        if (errors[r].empty()) errors[r] = "unknown failure";
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(options.jobs), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::size_t failed = 0;
  int first = -1;
  for (std::size_t r = 0; r < n; ++r) {
    if (!errors[r].empty()) {
      ++failed;
      if (first < 0) first = static_cast<int>(r);
    }
  }
  if (first >= 0) {
    std::string msg = errors[static_cast<std::size_t>(first)];
    if (failed > 1) msg += " (" + std::to_string(failed) + " repeats failed)";
    throw RepeatError(first, msg);
  }
  return summarize_repeats(name, options, std::move(outcomes));
}

std::string EvalReport::repeats_csv(bool header) const {
  std::ostringstream out;
  if (header) out << "model,repeat,seed,auc,acc,sen,spe\n";
  for (const auto& m : repeats) {
    out << name << ',' << m.repeat << ',' << m.seed << ',' << format_double(m.auc) << ',' << format_double(m.acc)
        << ',' << format_double(m.sen) << ',' << format_double(m.spe) << '\n';
  }
  return out.str();
}

std::string EvalReport::summary_csv(bool header) const {
  std::ostringstream out;
  if (header) out << "model,metric,mean,ci_lower,ci_upper,repeats\n";
  const std::pair<const char*, const Interval*> rows[] = {{"auc", &auc}, {"acc", &acc}, {"sen", &sen}, {"spe", &spe}};
  for (const auto& [metric, iv] : rows) {
    out << name << ',' << metric << ',' << format_double(iv->mean) << ',' << format_double(iv->lower) << ','
        << format_double(iv->upper) << ',' << repeats.size() << '\n';
  }
  return out.str();
}

RocCurve EvalReport::median_roc() const {
  const auto& o = outcomes.at(static_cast<std::size_t>(median_repeat));
  return roc_points(o.scores, o.labels);
}

std::string format_table(const std::vector<EvalReport>& reports, const std::vector<SkippedRow>& skipped) {
  std::size_t width = std::string("Input modality").size();
  for (const auto& r : reports) width = std::max(width, r.name.size());
  for (const auto& s : skipped) width = std::max(width, s.name.size());
  width += 2;
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  std::ostringstream out;
  out << pad("Input modality", width) << pad("AUC", 22) << pad("ACC", 22) << pad("SEN", 22) << "SPE\n";
  for (const auto& s : skipped) out << pad(s.name, width) << "skipped: " << s.reason << '\n';
  for (const auto& r : reports) {
    out << pad(r.name, width) << pad(format_interval(r.auc), 22) << pad(format_interval(r.acc), 22)
        << pad(format_interval(r.sen), 22) << format_interval(r.spe) << '\n';
  }
  return out.str();
}

}  // namespace mstream
