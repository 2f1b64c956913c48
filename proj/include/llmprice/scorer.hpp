#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "llmprice/market.hpp"

namespace llmprice {

inline constexpr int kFeatureCount = 9;

const std::vector<std::string>& feature_names();

// Identifies the featurizer; stored in model files and checked on load.
std::string feature_schema_hash();

// One row per rival (providers 0 .. m-2). Absolute features are centred and
// scaled over the rivals; target-relative differences are scaled only, so
// their sign relative to the target survives. Std floor 1e-9.
Eigen::MatrixXd rival_features(const Market& market);

struct RivalScores {
  Eigen::VectorXd sum_scores;  // >= 0
  Eigen::VectorXd avg_scores;  // > 0 somewhere
};

// Per-rival transform with a mean-pooled context, two tanh layers, and two
// heads: softplus for sum scores, exp for average weights.
struct ScorerModel {
  int width = 32;
  Eigen::MatrixXd w1;  // width x kFeatureCount
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // width x 2*width, [own | pooled context]
  Eigen::VectorXd b2;
  Eigen::MatrixXd head;       // 2 x width, rows (sum, avg)
  Eigen::Vector2d head_bias;  // chosen so fresh scores are all 1
  std::string schema_hash;

  static ScorerModel init(std::uint64_t seed, int width = 32);

  Eigen::Index param_count() const;
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& v);
};

// Activations kept for backpropagation.
struct ScorerTape {
  Eigen::MatrixXd x, h1, h2, z;
  Eigen::RowVectorXd context;
};

RivalScores score_features(const ScorerModel& model, const Eigen::MatrixXd& features,
                           ScorerTape* tape = nullptr);

// Throws SchemaError when the model was built for another featurizer.
RivalScores score_rivals(const ScorerModel& model, const Market& market);

// d loss / d flat parameters, given d loss / d scores.
Eigen::VectorXd scorer_backward(const ScorerModel& model, const ScorerTape& tape,
                                const Eigen::VectorXd& d_sum, const Eigen::VectorXd& d_avg);

void save_scorer(const ScorerModel& model, const std::string& path);
ScorerModel load_scorer(const std::string& path);

}  // namespace llmprice
