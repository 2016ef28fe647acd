#pragma once

// Session-level learning curves, balanced two-way ANOVA with interaction,
// and Tukey HSD post-hoc comparisons.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kinadapt/data.hpp"
#include "kinadapt/mc_dropout.hpp"

namespace kinadapt {

struct CurvePoint {
  std::string group;
  int session = 0;
  std::size_t count = 0;
  double mean_expert_prob = 0.0;
  double std_expert_prob = 0.0;  // sample std (n-1); 0 for single-trial cells
  double mean_entropy = 0.0;
  double std_entropy = 0.0;
  bool degenerate = false;  // count < 2
};

struct LearningCurve {
  std::vector<CurvePoint> points;  // sorted by (group, session)
};

struct TrialPrediction {
  std::string trial_id;
  McPrediction prediction;
};

LearningCurve aggregate_sessions(std::span<const TrialPrediction> predictions,
                                 std::span<const Trial> metadata);

struct Observation {
  double value = 0.0;
  std::string a;  // factor A level
  std::string b;  // factor B level
};

struct AnovaRow {
  std::string source;
  double ss = 0.0;
  double df = 0.0;
  double ms = 0.0;
  double f = 0.0;
  double p = 1.0;
};

struct AnovaResult {
  AnovaRow factor_a, factor_b, interaction, residual;
  double ss_total = 0.0;
  std::size_t observations = 0;
  std::size_t per_cell = 0;
  std::vector<std::string> levels_a, levels_b;  // sorted
  std::vector<double> means_a, means_b;         // marginal means per level
};

// Fixed-effects balanced design; rejects unequal or < 2 cell counts with ConfigError.
AnovaResult two_way_anova(std::span<const Observation> observations, const std::string& name_a = "A",
                          const std::string& name_b = "B");

struct TukeyComparison {
  std::string level_i;
  std::string level_j;
  double mean_diff = 0.0;  // mean_i - mean_j
  double q = 0.0;
  double p = 1.0;
  bool significant = false;  // p < 0.05
  std::string direction;     // "lower<higher" when significant, "-" otherwise
};

struct LevelMean {
  std::string level;
  double mean = 0.0;
};

std::vector<TukeyComparison> tukey_hsd(std::span<const LevelMean> means, double mse, double df_resid,
                                       double n_per_level);

// Comparisons over the marginal means of one factor of a fitted ANOVA.
std::vector<TukeyComparison> tukey_for_factor_a(const AnovaResult& anova);
std::vector<TukeyComparison> tukey_for_factor_b(const AnovaResult& anova);

// group,session,count,mean_expert_prob,std_expert_prob,mean_entropy,std_entropy,degenerate
void write_curve_csv(const LearningCurve& curve, std::ostream& out);
// source,ss,df,ms,f,p
void write_anova_csv(const AnovaResult& anova, std::ostream& out);
// factor,level_i,level_j,mean_diff,q,p,significant,direction
void write_tukey_csv(const std::string& factor, std::span<const TukeyComparison> rows,
                     std::ostream& out, bool header = true);

// Mean +- std of the expert probability per group across sessions.
std::string learning_curve_svg(const LearningCurve& curve);

}  // namespace kinadapt
