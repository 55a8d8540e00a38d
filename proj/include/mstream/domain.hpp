#pragma once

#include <array>
#include <string>

namespace mstream {

// The three drawing conditions, in the fixed order used everywhere.
enum class Condition { copy = 0, immediate = 1, delayed = 2 };

inline constexpr std::array<Condition, 3> kConditions{Condition::copy, Condition::immediate, Condition::delayed};

std::string to_string(Condition condition);
Condition condition_from_string(const std::string& name);

enum class Label { cn = 0, mci = 1 };

std::string to_string(Label label);
Label label_from_string(const std::string& name);

enum class Sex { female, male };

std::string to_string(Sex sex);
Sex sex_from_string(const std::string& name);

inline constexpr double kMaxFigureScore = 36.0;

// Scores on the 36-point system, one per condition.
struct ScoreTriple {
  double copy = 0;
  double immediate = 0;
  double delayed = 0;

  double operator[](Condition c) const;
  double& operator[](Condition c);
  // Throws DataError when a score is outside [0, 36] or not finite.
  void validate(const std::string& context) const;
  bool operator==(const ScoreTriple&) const = default;
};

struct Demographics {
  double age = 0;
  Sex sex = Sex::female;
  double education = 0;

  // Age in [40, 120], education in [0, 30].
  void validate(const std::string& context) const;
  bool operator==(const Demographics&) const = default;
};

}  // namespace mstream
