#pragma once

// Sparse bipartite stochastic block model instance: C offline classes with
// budgets b, D online classes arriving iid from nu, and edge probability
// a(c,d)/N between an offline node of class c and an arrival of class d.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "obm/rng.hpp"

namespace obm {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct ModelParams {
  std::size_t num_offline_classes = 0;  // C
  std::size_t num_online_classes = 0;   // D
  std::int64_t offline_scale = 0;       // N
  double horizon_factor = 0.0;          // alpha, T = round(alpha N)
  Matrix affinity;                      // C x D, expected neighbours per N
  double affinity_cap = 0.0;            // a_max, a <= a_max < N
  std::vector<double> budgets;          // b, sums to 1
  std::vector<double> arrival_law;      // nu, sums to 1

  std::size_t C() const { return num_offline_classes; }
  std::size_t D() const { return num_online_classes; }
  double N() const { return static_cast<double>(offline_scale); }
  double a(std::size_t c, std::size_t d) const { return affinity(c, d); }
  double edge_probability(std::size_t c, std::size_t d) const { return affinity(c, d) / N(); }

  /// Number of arrivals, alpha N rounded half-up.
  std::int64_t horizon() const {
    return static_cast<std::int64_t>(std::floor(horizon_factor * N() + 0.5));
  }
};

inline constexpr double kSimplexTolerance = 1e-12;

class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string field, const std::string& what)
      : std::invalid_argument(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

namespace detail {

template <class T>
std::string str(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Throws ValidationError naming the first violated invariant.
inline void validate(const ModelParams& p) {
  using detail::str;
  if (p.num_offline_classes == 0)
    throw ValidationError("num_offline_classes", "num_offline_classes must be positive");
  if (p.num_online_classes == 0)
    throw ValidationError("num_online_classes", "num_online_classes must be positive");
  if (p.offline_scale <= 0)
    throw ValidationError("offline_scale",
                          "offline_scale must be positive, got " + str(p.offline_scale));
  if (!(p.horizon_factor > 0.0) || !std::isfinite(p.horizon_factor))
    throw ValidationError("horizon_factor",
                          "horizon_factor must be positive, got " + str(p.horizon_factor));
  if (p.affinity.rows() != p.C() || p.affinity.cols() != p.D())
    throw ValidationError("affinity", "affinity must be " + str(p.C()) + "x" + str(p.D()) +
                                          ", got " + str(p.affinity.rows()) + "x" +
                                          str(p.affinity.cols()));
  if (!std::isfinite(p.affinity_cap) || p.affinity_cap < 0.0)
    throw ValidationError("affinity_cap", "affinity_cap must be finite and non-negative, got " +
                                              str(p.affinity_cap));
  for (std::size_t c = 0; c < p.C(); ++c) {
    for (std::size_t d = 0; d < p.D(); ++d) {
      const double v = p.affinity(c, d);
      const std::string where = "affinity[" + str(c) + "][" + str(d) + "]";
      if (!std::isfinite(v) || v < 0.0)
        throw ValidationError("affinity", where + "=" + str(v) + " must be finite and >= 0");
      if (v >= p.N())
        throw ValidationError("affinity", "affinity exceeds cap: " + where + "=" + str(v) +
                                              " must be below offline_scale=" +
                                              str(p.offline_scale));
      if (v > p.affinity_cap)
        throw ValidationError("affinity", "affinity exceeds cap: " + where + "=" + str(v) +
                                              " > affinity_cap=" + str(p.affinity_cap));
    }
  }
  if (p.affinity_cap >= p.N())
    throw ValidationError("affinity_cap", "affinity_cap=" + str(p.affinity_cap) +
                                              " must be below offline_scale=" +
                                              str(p.offline_scale));
  auto check_simplex = [&](const std::vector<double>& v, std::size_t n, const char* field,
                           const char* label) {
    if (v.size() != n)
      throw ValidationError(field, std::string(field) + " must have length " + str(n) +
                                       ", got " + str(v.size()));
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(v[i]) || v[i] < 0.0)
        throw ValidationError(field, std::string(field) + "[" + str(i) + "]=" + str(v[i]) +
                                         " must be finite and >= 0");
    }
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    if (std::abs(s - 1.0) > kSimplexTolerance)
      throw ValidationError(field, std::string(label) + " do not sum to 1 (sum=" + str(s) + ")");
  };
  check_simplex(p.budgets, p.C(), "budgets", "budgets");
  check_simplex(p.arrival_law, p.D(), "arrival_law", "arrival_law entries");
}

/// Explicit renormalization of b and nu; never applied implicitly.
inline void normalize_simplices(ModelParams& p) {
  auto norm = [](std::vector<double>& v) {
    const double s = std::accumulate(v.begin(), v.end(), 0.0);
    if (s > 0.0)
      for (double& x : v) x /= s;
  };
  norm(p.budgets);
  norm(p.arrival_law);
}

enum class OfflineMode { rounding, sampled };

/// Per-class offline node counts summing to N. `rounding` is the
/// largest-remainder apportionment of N b_c (ties to the lower class index);
/// `sampled` is a multinomial(N, b) draw.
inline std::vector<std::int64_t> realize_offline_counts(const ModelParams& p, OfflineMode mode,
                                                        Engine& rng) {
  const std::size_t C = p.C();
  std::vector<std::int64_t> counts(C, 0);
  if (mode == OfflineMode::rounding) {
    std::vector<double> rem(C);
    std::int64_t assigned = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double exact = p.N() * p.budgets[c];
      counts[c] = static_cast<std::int64_t>(std::floor(exact));
      rem[c] = exact - static_cast<double>(counts[c]);
      assigned += counts[c];
    }
    std::vector<std::size_t> order(C);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return rem[i] > rem[j]; });
    std::int64_t left = p.offline_scale - assigned;
    for (std::size_t k = 0; left > 0; k = (k + 1) % C) {
      if (p.budgets[order[k]] > 0.0 || C == 1) {
        ++counts[order[k]];
        --left;
      }
    }
    while (left < 0) {  // only reachable through rounding noise in N*b
      for (std::size_t k = C; k-- > 0 && left < 0;) {
        if (counts[order[k]] > 0) {
          --counts[order[k]];
          ++left;
        }
      }
    }
    return counts;
  }
  std::int64_t remaining = p.offline_scale;
  double mass = 1.0;
  for (std::size_t c = 0; c + 1 < C; ++c) {
    if (remaining == 0) break;
    const double q = mass > 0.0 ? std::clamp(p.budgets[c] / mass, 0.0, 1.0) : 0.0;
    std::binomial_distribution<std::int64_t> bin(remaining, q);
    counts[c] = bin(rng);
    remaining -= counts[c];
    mass -= p.budgets[c];
  }
  counts[C - 1] += remaining;
  return counts;
}

/// Draws an online class from nu by inverse CDF; zero-mass classes are never
/// returned.
inline std::size_t sample_arrival_class(const ModelParams& p, Engine& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t d = 0; d < p.D(); ++d) {
    if (p.arrival_law[d] <= 0.0) continue;
    cum += p.arrival_law[d];
    last_positive = d;
    if (u < cum) return d;
  }
  return last_positive;
}

// ---- JSON instance files ----------------------------------------------------

inline nlohmann::json to_json(const ModelParams& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t c = 0; c < p.C(); ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t d = 0; d < p.D(); ++d) row.push_back(p.affinity(c, d));
    rows.push_back(row);
  }
  return {{"num_offline_classes", p.num_offline_classes},
          {"num_online_classes", p.num_online_classes},
          {"offline_scale", p.offline_scale},
          {"horizon_factor", p.horizon_factor},
          {"affinity", rows},
          {"affinity_cap", p.affinity_cap},
          {"budgets", p.budgets},
          {"arrival_law", p.arrival_law}};
}

/// Parses an instance document. `affinity` is either nested rows or a flat
/// row-major array; `affinity_cap` defaults to the largest entry; the class
/// counts default to the lengths of `budgets` and `arrival_law`.
/// Does not validate.
inline ModelParams params_from_json(const nlohmann::json& j) {
  ModelParams p;
  try {
    p.budgets = j.at("budgets").get<std::vector<double>>();
    p.arrival_law = j.at("arrival_law").get<std::vector<double>>();
    p.num_offline_classes = j.value("num_offline_classes", p.budgets.size());
    p.num_online_classes = j.value("num_online_classes", p.arrival_law.size());
    p.offline_scale = j.at("offline_scale").get<std::int64_t>();
    p.horizon_factor = j.at("horizon_factor").get<double>();
    const auto& a = j.at("affinity");
    if (!a.is_array()) throw ValidationError("affinity", "affinity must be an array");
    if (!a.empty() && a.front().is_array()) {
      p.affinity = Matrix(a.size(), a.front().size());
      for (std::size_t c = 0; c < a.size(); ++c) {
        if (a[c].size() != p.affinity.cols())
          throw ValidationError("affinity", "affinity rows have unequal lengths");
        for (std::size_t d = 0; d < a[c].size(); ++d) p.affinity(c, d) = a[c][d].get<double>();
      }
    } else {
      if (a.size() != p.num_offline_classes * p.num_online_classes)
        throw ValidationError("affinity", "flat affinity must have C*D entries");
      p.affinity = Matrix(p.num_offline_classes, p.num_online_classes);
      for (std::size_t i = 0; i < a.size(); ++i) p.affinity.data()[i] = a[i].get<double>();
    }
    if (j.contains("affinity_cap")) {
      p.affinity_cap = j.at("affinity_cap").get<double>();
    } else {
      const auto& v = p.affinity.data();
      p.affinity_cap = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("document", std::string("malformed instance: ") + e.what());
  }
  return p;
}

/// JSON Schema (draft 2020-12) describing instance documents.
inline const char* instance_schema() {
  return R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "SBM online matching instance",
  "type": "object",
  "required": ["offline_scale", "horizon_factor", "affinity", "budgets", "arrival_law"],
  "properties": {
    "num_offline_classes": {"type": "integer", "minimum": 1},
    "num_online_classes": {"type": "integer", "minimum": 1},
    "offline_scale": {"type": "integer", "minimum": 1},
    "horizon_factor": {"type": "number", "exclusiveMinimum": 0},
    "affinity": {
      "description": "C x D matrix, nested rows or flat row-major",
      "type": "array",
      "items": {"oneOf": [{"type": "number", "minimum": 0},
                          {"type": "array", "items": {"type": "number", "minimum": 0}}]}
    },
    "affinity_cap": {"type": "number", "minimum": 0},
    "budgets": {"type": "array", "items": {"type": "number", "minimum": 0}},
    "arrival_law": {"type": "array", "items": {"type": "number", "minimum": 0}}
  }
})";
}

}  // namespace obm
