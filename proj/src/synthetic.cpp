#include "mstream/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "mstream/errors.hpp"

namespace mstream {

namespace {

struct Point {
  double x, y;
};
using Polyline = std::vector<Point>;
using Element = std::vector<Polyline>;

Polyline circle(Point c, double r, int segments) {
  Polyline p;
  for (int i = 0; i <= segments; ++i) {
    const double a = 2.0 * M_PI * i / segments;
    p.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
  }
  return p;
}

// A Rey-like line figure in unit coordinates, one entry per scored element.
const std::vector<Element>& figure() {
  static const std::vector<Element> elements = [] {
    const double x0 = 0.2, x1 = 0.7, y0 = 0.25, y1 = 0.65, mx = 0.45, my = 0.45;
    std::vector<Element> e(kFigureElements);
    e[0] = {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}, {x0, y0}}};
    e[1] = {{{x0, y0}, {x1, y1}}, {{x1, y0}, {x0, y1}}};
    e[2] = {{{x0, my}, {x1, my}}};
    e[3] = {{{mx, y0}, {mx, y1}}};
    e[4] = {{{0.23, 0.28}, {0.31, 0.28}, {0.31, 0.36}, {0.23, 0.36}, {0.23, 0.28}}};
    e[5] = {{{0.22, 0.21}, {0.33, 0.21}}};
    for (int i = 0; i < 4; ++i) e[6].push_back({{0.34, 0.29 + 0.035 * i}, {0.42, 0.29 + 0.035 * i}});
    e[7] = {{{mx, y0}, {0.58, 0.1}, {x1, y0}}};
    e[8] = {{{0.28, 0.5}, {0.28, 0.62}}};
    e[9] = {circle({0.58, 0.34}, 0.045, 16), circle({0.565, 0.325}, 0.006, 6), circle({0.595, 0.325}, 0.006, 6),
            circle({0.58, 0.355}, 0.006, 6)};
    for (int i = 1; i <= 5; ++i) {
      const double t = i / 6.0;
      const Point c{mx + t * (x1 - mx), my + t * (y1 - my)};
      e[10].push_back({{c.x - 0.025, c.y + 0.025}, {c.x + 0.025, c.y - 0.025}});
    }
    e[11] = {{{x1, y0}, {0.9, my}, {x1, y1}}};
    e[12] = {{{0.9, 0.46}, {0.93, 0.53}, {0.9, 0.6}, {0.87, 0.53}, {0.9, 0.46}}};
    e[13] = {{{0.78, 0.33}, {0.78, 0.57}}};
    e[14] = {{{x1, my}, {0.9, my}}};
    e[15] = {{{mx, y1}, {mx, 0.76}}, {{0.4, 0.72}, {0.5, 0.72}}};
    e[16] = {{{x0, 0.5}, {0.08, 0.5}, {0.08, 0.65}, {x0, 0.65}}};
    e[17] = {{{0.12, 0.18}, {0.12, 0.34}}, {{0.12, 0.26}, {x0, 0.26}}};
    return e;
  }();
  return elements;
}

// Per-element difficulty added to the keep logit.
constexpr std::array<double, kFigureElements> kEase{1.2, 0.8, 0.9, 0.9, -0.2, -0.6, -0.4, 0.3,  -0.8,
                                                   0.2, -0.5, 0.5, -0.3, -0.7, 0.1,  -0.1, -0.2, -0.9};
// Base keep logit and memory sensitivity per condition.
constexpr std::array<double, 3> kBaseLogit{2.6, 0.1, -0.1};
constexpr std::array<double, 3> kMemoryWeight{0.7, 1.3, 1.4};

struct Stroke {
  double width;     // pixels
  double darkness;  // ink intensity in (0, 1]
  double tremor;    // perpendicular wobble amplitude, pixels
};

void draw_capsule(std::vector<double>& ink, std::size_t size, Point a, Point b, const Stroke& s) {
  const double r = s.width / 2.0 + 0.5;
  const auto lo_x = static_cast<long>(std::floor(std::min(a.x, b.x) - r - 1));
  const auto hi_x = static_cast<long>(std::ceil(std::max(a.x, b.x) + r + 1));
  const auto lo_y = static_cast<long>(std::floor(std::min(a.y, b.y) - r - 1));
  const auto hi_y = static_cast<long>(std::ceil(std::max(a.y, b.y) + r + 1));
  const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
  for (long y = std::max(0L, lo_y); y <= std::min<long>(size - 1, hi_y); ++y) {
    for (long x = std::max(0L, lo_x); x <= std::min<long>(size - 1, hi_x); ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
      const double coverage = std::clamp(r - std::sqrt(ex * ex + ey * ey), 0.0, 1.0);
      double& cell = ink[y * size + x];
      cell = std::max(cell, s.darkness * coverage);
    }
  }
}

RasterImage render(const std::array<bool, kFigureElements>& intact, double memory, Condition condition,
                   double motor, std::size_t size, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double px = static_cast<double>(size) / 128.0;
  Stroke stroke;
  stroke.width = std::clamp((2.0 - 0.35 * motor + 0.15 * normal(rng)) * px, 0.6 * px, 4.0 * px);
  stroke.darkness = std::clamp(0.88 - 0.07 * motor + 0.03 * normal(rng), 0.35, 1.0);
  stroke.tremor = std::max(0.0, 0.3 + 0.35 * motor) * px;
  const double scale = size * (0.82 + 0.1 * uniform(rng));
  const Point origin{size / 2.0 + 0.03 * size * normal(rng), size / 2.0 + 0.03 * size * normal(rng)};
  const double distortion = 0.006 * (1.0 + std::max(0.0, memory)) * (condition == Condition::copy ? 1.0 : 1.6);

  std::vector<double> ink(size * size, 0.0);
  const auto& elements = figure();
  for (std::size_t e = 0; e < kFigureElements; ++e) {
    if (!intact[e]) continue;
    const Point shift{distortion * normal(rng), distortion * normal(rng)};
    for (const auto& line : elements[e]) {
      std::vector<Point> pts;
      for (const auto& p : line) {
        pts.push_back({origin.x + scale * (p.x + shift.x - 0.5), origin.y + scale * (p.y + shift.y - 0.45)});
      }
      const double phase = 2.0 * M_PI * uniform(rng);
      for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const Point a = pts[i], b = pts[i + 1];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        const auto pieces = std::max<std::size_t>(1, static_cast<std::size_t>(len / (1.5 * px)));
        const double nx = len > 0 ? -(b.y - a.y) / len : 0.0, ny = len > 0 ? (b.x - a.x) / len : 0.0;
        Point prev = a;
        for (std::size_t k = 1; k <= pieces; ++k) {
          const double t = static_cast<double>(k) / pieces;
          const double wobble = k == pieces ? 0.0 : stroke.tremor * std::sin(phase + 2.3 * k);
          const Point next{a.x + t * (b.x - a.x) + wobble * nx, a.y + t * (b.y - a.y) + wobble * ny};
          draw_capsule(ink, size, prev, next, stroke);
          prev = next;
        }
      }
    }
  }
  RasterImage img;
  img.width = img.height = size;
  img.channels = 1;
  img.pixels.resize(size * size);
  for (std::size_t i = 0; i < ink.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - ink[i])));
  return img;
}

// Even score in [0, 36] more than 10 points from ai, near ai +- magnitude.
double gross_score(double ai, int magnitude, bool upward) {
  double best = -1, best_gap = 1e9;
  for (int sign : {upward ? 1 : -1, upward ? -1 : 1}) {
    for (int s = 0; s <= 36; s += 2) {
      const double diff = std::abs(s - ai);
      if (diff <= 10.0 || diff > 21.0 || (s - ai) * sign < 0) continue;
      const double gap = std::abs(s - (ai + sign * magnitude));
      if (gap < best_gap) best_gap = gap, best = s;
    }
    if (best >= 0) return best;
  }
  throw ConfigError("cannot place a gross error");
}

}  // namespace

SyntheticParams SyntheticParams::from_config(const Config& cfg) {
  SyntheticParams p;
  const std::string s = "synthetic";
  p.n = static_cast<std::size_t>(cfg.get_int(s, "n", static_cast<int>(p.n)));
  p.seed = static_cast<std::uint64_t>(cfg.get_int(s, "seed", static_cast<int>(p.seed)));
  p.image_size = static_cast<std::size_t>(cfg.get_int(s, "image_size", static_cast<int>(p.image_size)));
  p.memory_effect = cfg.get_double(s, "memory_effect", p.memory_effect);
  p.motor_effect = cfg.get_double(s, "motor_effect", p.motor_effect);
  p.age_effect = cfg.get_double(s, "age_effect", p.age_effect);
  p.ai_noise_sd = cfg.get_double(s, "ai_noise_sd", p.ai_noise_sd);
  p.ai_noise_limit = cfg.get_double(s, "ai_noise_limit", p.ai_noise_limit);
  p.gross_errors = static_cast<std::size_t>(cfg.get_int(s, "gross_errors", static_cast<int>(p.gross_errors)));
  p.mmse_noise_sd = cfg.get_double(s, "mmse_noise_sd", p.mmse_noise_sd);
  p.render_images = cfg.get_bool(s, "render_images", p.render_images);
  return p;
}

void SyntheticParams::write(Config& cfg) const {
  const std::string s = "synthetic";
  cfg.set(s, "n", std::to_string(n));
  cfg.set(s, "seed", std::to_string(seed));
  cfg.set(s, "image_size", std::to_string(image_size));
  cfg.set(s, "memory_effect", format_double(memory_effect));
  cfg.set(s, "motor_effect", format_double(motor_effect));
  cfg.set(s, "age_effect", format_double(age_effect));
  cfg.set(s, "ai_noise_sd", format_double(ai_noise_sd));
  cfg.set(s, "ai_noise_limit", format_double(ai_noise_limit));
  cfg.set(s, "gross_errors", std::to_string(gross_errors));
  cfg.set(s, "mmse_noise_sd", format_double(mmse_noise_sd));
  cfg.set(s, "render_images", render_images ? "true" : "false");
}

void SyntheticParams::validate() const {
  if (n < 20) throw ConfigError("synthetic cohort needs n >= 20, got " + std::to_string(n));
  if (image_size < 32) throw ConfigError("synthetic image_size must be at least 32");
  for (double v : {memory_effect, motor_effect, age_effect, ai_noise_sd, ai_noise_limit, mmse_noise_sd}) {
    if (!std::isfinite(v) || v < 0) throw ConfigError("synthetic effect sizes and noise levels must be finite and >= 0");
  }
  if (ai_noise_limit > 10.0) throw ConfigError("ai_noise_limit above 10 would blur the gross-error rule");
  if (gross_errors > 3 * n) throw ConfigError("more gross errors than (image, condition) pairs");
}

std::string SyntheticParams::describe() const {
  std::ostringstream out;
  out << "synthetic n=" << n << " seed=" << seed << " image_size=" << image_size
      << " memory_effect=" << format_double(memory_effect) << " motor_effect=" << format_double(motor_effect)
      << " age_effect=" << format_double(age_effect) << " ai_noise_sd=" << format_double(ai_noise_sd)
      << " gross_errors=" << gross_errors;
  return out.str();
}

std::string image_id(const std::string& subject_id, Condition condition) {
  return subject_id + "_" + to_string(condition);
}

SyntheticCohort generate_synthetic_cohort(const SyntheticParams& params) {
  params.validate();
  SyntheticCohort cohort;
  cohort.params = params;
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<Label> labels(params.n);
  for (std::size_t i = 0; i < params.n; ++i) labels[i] = i % 2 == 0 ? Label::cn : Label::mci;
  std::shuffle(labels.begin(), labels.end(), rng);

  for (std::size_t i = 0; i < params.n; ++i) {
    SyntheticSubject s;
    SubjectRecord& r = s.record;
    char id[32];
    std::snprintf(id, sizeof id, "S%04zu", i + 1);
    r.subject_id = id;
    r.label = labels[i];
    const bool mci = r.label == Label::mci;
    s.memory = normal(rng) + (mci ? params.memory_effect : 0.0);
    s.motor = normal(rng) + (mci ? params.motor_effect : 0.0);

    r.demographics.age = std::clamp(std::round(70.0 + (mci ? params.age_effect : 0.0) + 6.0 * normal(rng)), 50.0, 95.0);
    r.demographics.sex = uniform(rng) < 0.6 ? Sex::female : Sex::male;
    r.demographics.education = std::clamp(std::round(11.0 + 3.5 * normal(rng)), 0.0, 24.0);
    r.mmse = std::clamp(std::round(28.0 - 1.0 * s.memory + params.mmse_noise_sd * normal(rng)), 0.0, 30.0);
    r.cdr = mci ? 0.5 : 0.0;

    ScoreTriple expert, ai;
    for (Condition c : kConditions) {
      const auto ci = static_cast<std::size_t>(c);
      int kept = 0;
      for (std::size_t e = 0; e < kFigureElements; ++e) {
        const double logit = kBaseLogit[ci] + kEase[e] - kMemoryWeight[ci] * s.memory;
        s.intact[ci][e] = uniform(rng) < 1.0 / (1.0 + std::exp(-logit));
        kept += s.intact[ci][e];
      }
      expert[c] = 2.0 * kept;
      const double noise = std::clamp(params.ai_noise_sd * normal(rng), -params.ai_noise_limit, params.ai_noise_limit);
      ai[c] = std::clamp(std::round(expert[c] + noise), 0.0, kMaxFigureScore);
      if (params.render_images) s.images[ci] = render(s.intact[ci], s.memory, c, s.motor, params.image_size, rng);
      r.image_paths[ci] = "images/" + image_id(r.subject_id, c) + ".png";
    }
    r.expert_scores = expert;
    r.ai_scores = ai;
    cohort.subjects.push_back(std::move(s));
  }

  // Gross errors go into the recorded expert score; the AI score stays close
  // to the truth so the error is recoverable by re-rating.
  std::vector<std::size_t> slots(3 * params.n);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(params.gross_errors);
  std::sort(slots.begin(), slots.end());
  std::uniform_int_distribution<int> magnitude(11, 20);
  for (std::size_t slot : slots) {
    auto& r = cohort.subjects[slot / 3].record;
    const Condition c = kConditions[slot % 3];
    const double a = (*r.ai_scores)[c];
    const double truth = (*r.expert_scores)[c];
    const int m = magnitude(rng);
    const bool upward = uniform(rng) < 0.5;
    const double recorded = gross_score(a, m, upward);
    (*r.expert_scores)[c] = recorded;
    cohort.gross_errors.push_back({r.subject_id, c, truth, recorded, a});
  }
  return cohort;
}

CohortManifest write_synthetic_cohort(const SyntheticCohort& cohort, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "images");
  CohortManifest m;
  m.provenance = cohort.params.describe();
  m.base_dir = out_dir;
  std::ostringstream scores, truth;
  scores << "image_id,condition,expert_score,ai_score\n";
  truth << "image_id,corrected_score,note\n";
  for (const auto& s : cohort.subjects) {
    m.records.push_back(s.record);
    for (Condition c : kConditions) {
      const auto ci = static_cast<std::size_t>(c);
      if (s.images[ci].pixels.empty()) {
        m.records.back().image_paths[ci].clear();
      } else {
        write_png(out_dir / s.record.image_paths[ci], s.images[ci]);
      }
      scores << image_id(s.record.subject_id, c) << ',' << to_string(c) << ','
             << format_double((*s.record.expert_scores)[c]) << ',' << format_double((*s.record.ai_scores)[c]) << '\n';
    }
  }
  for (const auto& g : cohort.gross_errors) {
    truth << image_id(g.subject_id, g.condition) << ',' << format_double(g.true_score) << ",planted gross error\n";
  }
  save_manifest(m, out_dir / "manifest.csv");
  write_text_file(out_dir / "qc_scores.csv", scores.str());
  write_text_file(out_dir / "qc_truth.csv", truth.str());
  return m;
}

}  // namespace mstream
