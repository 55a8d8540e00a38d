#include "mstream/domain.hpp"

#include <cmath>

#include "mstream/errors.hpp"

namespace mstream {

std::string to_string(Condition condition) {
  switch (condition) {
    case Condition::copy:
      return "copy";
    case Condition::immediate:
      return "immediate";
    case Condition::delayed:
      return "delayed";
  }
  return "?";
}

Condition condition_from_string(const std::string& name) {
  if (name == "copy") return Condition::copy;
  if (name == "immediate" || name == "imm") return Condition::immediate;
  if (name == "delayed" || name == "del") return Condition::delayed;
  throw DataError("unknown condition '" + name + "'");
}

std::string to_string(Label label) { return label == Label::cn ? "CN" : "MCI"; }

Label label_from_string(const std::string& name) {
  if (name == "CN" || name == "cn" || name == "0") return Label::cn;
  if (name == "MCI" || name == "mci" || name == "1") return Label::mci;
  throw DataError("unknown label '" + name + "'");
}

std::string to_string(Sex sex) { return sex == Sex::female ? "female" : "male"; }

Sex sex_from_string(const std::string& name) {
  if (name == "female" || name == "F" || name == "f") return Sex::female;
  if (name == "male" || name == "M" || name == "m") return Sex::male;
  throw DataError("unknown sex '" + name + "'");
}

double ScoreTriple::operator[](Condition c) const {
  return c == Condition::copy ? copy : c == Condition::immediate ? immediate : delayed;
}

double& ScoreTriple::operator[](Condition c) {
  return c == Condition::copy ? copy : c == Condition::immediate ? immediate : delayed;
}

void ScoreTriple::validate(const std::string& context) const {
  for (Condition c : kConditions) {
    const double v = (*this)[c];
    if (!std::isfinite(v) || v < 0.0 || v > kMaxFigureScore) {
      throw DataError(context + ": " + to_string(c) + " score " + std::to_string(v) + " outside [0, 36]");
    }
  }
}

void Demographics::validate(const std::string& context) const {
  if (!std::isfinite(age) || age < 40.0 || age > 120.0) {
    throw DataError(context + ": age " + std::to_string(age) + " outside [40, 120]");
  }
  if (!std::isfinite(education) || education < 0.0 || education > 30.0) {
    throw DataError(context + ": education " + std::to_string(education) + " outside [0, 30]");
  }
}

}  // namespace mstream
