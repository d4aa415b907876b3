#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynaslice/errors.hpp"

namespace dynaslice {

constexpr double kDefaultFsMax = 0.95;

// Per-layer slice plan. s_p is the target average slice fraction over all
// layers, s_b the guaranteed floor per layer; fs holds the final per-layer
// fractions whose mean equals s_p, kept_dims the discretized residual widths.
struct SliceSchedule {
  double s_p = 0.0;
  double s_b = 0.0;
  double fs_max = kDefaultFsMax;
  std::vector<double> slr;
  std::vector<double> fs_pre_clamp;
  std::vector<double> fs;
  std::vector<std::size_t> kept_dims;
  double realized_mean_slice = 0.0;
  bool clamped = false;
  std::string lr_source;
};

// Redundancy-proportional slicing: scale the normalized profile so it
// averages s_p - s_b, then add the s_b floor. The mean of the result is
// s_p by construction. With s_b = s_p the proportional part vanishes and
// the schedule is constant.
inline SliceSchedule compute_schedule(const std::vector<double>& lr_norm,
                                      double s_p, double s_b) {
  if (lr_norm.empty())
    throw precondition_error("compute_schedule: profile is empty");
  if (!(s_p >= 0.0 && s_p < 1.0))
    throw precondition_error("compute_schedule: s_p must be in [0,1)");
  if (s_b < 0.0 || s_b > s_p)
    throw precondition_error("compute_schedule: need 0 <= s_b <= s_p, got s_b=" +
                             std::to_string(s_b) + " s_p=" + std::to_string(s_p));
  for (double v : lr_norm)
    if (v < 0.0 || v > 1.0)
      throw precondition_error("compute_schedule: normalized LR outside [0,1]");

  const std::size_t n = lr_norm.size();
  double mean_lr = 0.0;
  for (double v : lr_norm) mean_lr += v;
  mean_lr /= static_cast<double>(n);

  SliceSchedule sched;
  sched.s_p = s_p;
  sched.s_b = s_b;
  sched.slr.assign(n, 0.0);
  sched.fs.assign(n, 0.0);

  if (s_p == s_b) {
    // Constant slicing; no redundancy signal needed.
    for (std::size_t i = 0; i < n; ++i) sched.fs[i] = s_p;
  } else if (mean_lr == 0.0) {
    throw schedule_error(
        "compute_schedule: profile mean is 0, no redundancy signal to "
        "distribute for s_p > s_b");
  } else {
    const double scale = (s_p - s_b) / mean_lr;
    for (std::size_t i = 0; i < n; ++i) {
      sched.slr[i] = lr_norm[i] * scale;
      sched.fs[i] = sched.slr[i] + s_b;
    }
  }
  sched.fs_pre_clamp = sched.fs;
  return sched;
}

// Clamps fs into [s_b, fs_max] while preserving the mean: repeatedly clamp,
// then spread the lost mass over un-clamped entries proportionally to their
// remaining headroom. The clamped set only grows, so this terminates.
inline std::vector<double> clamp_and_redistribute(std::vector<double> fs,
                                                  double s_b, double fs_max,
                                                  bool* clamped_out = nullptr) {
  if (fs.empty())
    throw precondition_error("clamp_and_redistribute: empty schedule");
  double mean = 0.0;
  for (double v : fs) mean += v;
  mean /= static_cast<double>(fs.size());
  if (mean > fs_max + 1e-12 || mean < s_b - 1e-12)
    throw schedule_error("clamp_and_redistribute: mean " + std::to_string(mean) +
                         " infeasible within [" + std::to_string(s_b) + ", " +
                         std::to_string(fs_max) + "]");

  // Proportional-to-headroom spreading never pushes a receiver past the
  // bound (the feasibility precondition guarantees excess <= headroom), so
  // the loop settles after one clamp + one redistribution pass; the cap is
  // a guard against rounding stragglers.
  bool any_clamped = false;
  for (std::size_t iter = 0; iter < fs.size() + 2; ++iter) {
    double excess = 0.0;  // net mass removed by clamping, to be re-spread
    for (double& v : fs) {
      if (v > fs_max) {
        excess += v - fs_max;
        v = fs_max;
        any_clamped = true;
      } else if (v < s_b) {
        excess -= s_b - v;
        v = s_b;
        any_clamped = true;
      }
    }
    if (excess == 0.0) break;

    double headroom = 0.0;
    for (double v : fs)
      headroom += excess > 0.0 ? (fs_max - v) : (v - s_b);
    if (headroom <= 0.0)
      throw schedule_error(
          "clamp_and_redistribute: no headroom left to preserve the mean");
    const double ratio = excess / headroom;
    for (double& v : fs)
      v += ratio * (excess > 0.0 ? (fs_max - v) : (v - s_b));
  }
  if (clamped_out) *clamped_out = any_clamped;
  return fs;
}

// Kept residual width per layer: k_i = round((1 - fs_i) * d_model), never
// below 1. Rounding drift from the target mean is reported, not corrected.
inline std::vector<std::size_t> to_kept_dims(const std::vector<double>& fs,
                                             std::size_t d_model,
                                             double* realized_mean_slice = nullptr) {
  std::vector<std::size_t> kept(fs.size());
  for (std::size_t i = 0; i < fs.size(); ++i) {
    if (fs[i] < 0.0 || fs[i] >= 1.0)
      throw precondition_error("to_kept_dims: fs must be in [0,1)");
    const double keep_frac = (1.0 - fs[i]) * static_cast<double>(d_model);
    long long k = std::llround(keep_frac);  // half away from zero
    if (k < 1) k = 1;
    if (k > static_cast<long long>(d_model)) k = static_cast<long long>(d_model);
    kept[i] = static_cast<std::size_t>(k);
  }
  if (realized_mean_slice) {
    double kept_total = 0.0;
    for (std::size_t k : kept) kept_total += static_cast<double>(k);
    *realized_mean_slice =
        1.0 - kept_total / (static_cast<double>(fs.size()) *
                            static_cast<double>(d_model));
  }
  return kept;
}

// Full pipeline: proportional schedule, clamp, discretize.
inline SliceSchedule build_schedule(const std::vector<double>& lr_norm, double s_p,
                                    double s_b, std::size_t d_model,
                                    double fs_max = kDefaultFsMax,
                                    const std::string& lr_source = "") {
  SliceSchedule sched = compute_schedule(lr_norm, s_p, s_b);
  sched.fs_max = fs_max;
  sched.lr_source = lr_source;
  sched.fs = clamp_and_redistribute(sched.fs, s_b, fs_max, &sched.clamped);
  sched.kept_dims = to_kept_dims(sched.fs, d_model, &sched.realized_mean_slice);
  return sched;
}

inline nlohmann::json schedule_to_json(const SliceSchedule& s) {
  return {{"s_p", s.s_p},
          {"s_b", s.s_b},
          {"fs_max", s.fs_max},
          {"lr_source", s.lr_source},
          {"slr", s.slr},
          {"fs_pre_clamp", s.fs_pre_clamp},
          {"fs", s.fs},
          {"kept_dims", s.kept_dims},
          {"realized_mean_slice", s.realized_mean_slice},
          {"clamped", s.clamped}};
}

inline SliceSchedule schedule_from_json(const nlohmann::json& j) {
  SliceSchedule s;
  try {
    s.s_p = j.at("s_p").get<double>();
    s.s_b = j.at("s_b").get<double>();
    s.fs_max = j.at("fs_max").get<double>();
    s.lr_source = j.at("lr_source").get<std::string>();
    s.slr = j.at("slr").get<std::vector<double>>();
    s.fs_pre_clamp = j.at("fs_pre_clamp").get<std::vector<double>>();
    s.fs = j.at("fs").get<std::vector<double>>();
    s.kept_dims = j.at("kept_dims").get<std::vector<std::size_t>>();
    s.realized_mean_slice = j.at("realized_mean_slice").get<double>();
    s.clamped = j.at("clamped").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("schedule json: ") + e.what());
  }
  return s;
}

}  // namespace dynaslice
