#include "kinadapt/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "kinadapt/csv.hpp"
#include "kinadapt/error.hpp"
#include "kinadapt/special_functions.hpp"

namespace kinadapt {

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return out;
}

std::string curve_group_label(Group g) {
  const std::string name = group_name(g);
  return name.empty() ? "Unassigned" : name;
}

AnovaRow make_row(const std::string& source, double ss, double df, double ms_resid, double df_resid) {
  AnovaRow row;
  row.source = source;
  row.ss = std::max(ss, 0.0);
  row.df = df;
  row.ms = row.ss / df;
  if (ms_resid > 0.0) {
    row.f = row.ms / ms_resid;
    row.p = 1.0 - f_cdf(row.f, df, df_resid);
  } else if (row.ss > 0.0) {
    row.f = std::numeric_limits<double>::infinity();
    row.p = 0.0;
  } else {
    row.f = 0.0;
    row.p = 1.0;
  }
  row.p = std::clamp(row.p, 0.0, 1.0);
  return row;
}

std::vector<TukeyComparison> tukey_for_levels(const std::vector<std::string>& levels,
                                              const std::vector<double>& means, const AnovaResult& a,
                                              double n_per_level) {
  std::vector<LevelMean> lm;
  for (std::size_t i = 0; i < levels.size(); ++i) lm.push_back({levels[i], means[i]});
  return tukey_hsd(lm, a.residual.ms, a.residual.df, n_per_level);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

LearningCurve aggregate_sessions(std::span<const TrialPrediction> predictions,
                                 std::span<const Trial> metadata) {
  std::unordered_map<std::string, const Trial*> by_id;
  for (const auto& t : metadata) by_id.emplace(t.id, &t);

  std::map<std::pair<std::string, int>, std::pair<std::vector<double>, std::vector<double>>> cells;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.trial_id);
    if (it == by_id.end()) throw DataError("prediction for unknown trial id: " + p.trial_id);
    if (p.prediction.mean_probs.size() <= kExpertClass)
      throw DataError("prediction for " + p.trial_id + " has no expert-class probability");
    auto& cell = cells[{curve_group_label(it->second->group), it->second->session}];
    cell.first.push_back(p.prediction.mean_probs[kExpertClass]);
    cell.second.push_back(p.prediction.entropy);
  }

  LearningCurve curve;
  for (const auto& [key, values] : cells) {
    CurvePoint pt;
    pt.group = key.first;
    pt.session = key.second;
    pt.count = values.first.size();
    const auto prob = mean_std(values.first);
    const auto ent = mean_std(values.second);
    pt.mean_expert_prob = prob.mean;
    pt.std_expert_prob = prob.std;
    pt.mean_entropy = ent.mean;
    pt.std_entropy = ent.std;
    pt.degenerate = pt.count < 2;
    curve.points.push_back(pt);
  }
  return curve;
}

AnovaResult two_way_anova(std::span<const Observation> observations, const std::string& name_a,
                          const std::string& name_b) {
  if (observations.empty()) throw DataError("anova: no observations");
  std::set<std::string> set_a, set_b;
  for (const auto& o : observations) {
    if (!std::isfinite(o.value)) throw DataError("anova: non-finite observation");
    set_a.insert(o.a);
    set_b.insert(o.b);
  }
  AnovaResult r;
  r.levels_a.assign(set_a.begin(), set_a.end());
  r.levels_b.assign(set_b.begin(), set_b.end());
  const std::size_t na = r.levels_a.size();
  const std::size_t nb = r.levels_b.size();
  if (na < 2) throw ConfigError("anova: factor " + name_a + " needs at least 2 levels");
  if (nb < 2) throw ConfigError("anova: factor " + name_b + " needs at least 2 levels");

  auto index_in = [](const std::vector<std::string>& levels, const std::string& v) {
    return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), v) - levels.begin());
  };
  std::vector<std::vector<std::vector<double>>> cells(na, std::vector<std::vector<double>>(nb));
  for (const auto& o : observations)
    cells[index_in(r.levels_a, o.a)][index_in(r.levels_b, o.b)].push_back(o.value);

  const std::size_t n = cells[0][0].size();
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const auto c = cells[i][j].size();
      if (c == 0)
        throw ConfigError("anova: empty cell (" + r.levels_a[i] + ", " + r.levels_b[j] + ")");
      if (c != n)
        throw ConfigError("anova: unbalanced design, cell (" + r.levels_a[i] + ", " + r.levels_b[j] +
                        ") has " + std::to_string(c) + " observations, expected " +
                        std::to_string(n) + "; only balanced designs are supported");
    }
  if (n < 2) throw ConfigError("anova: need at least 2 observations per cell");
  r.per_cell = n;
  r.observations = observations.size();

  const double nd = static_cast<double>(n);
  std::vector<std::vector<double>> cell_mean(na, std::vector<double>(nb));
  double grand = 0.0;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      double s = 0.0;
      for (double v : cells[i][j]) s += v;
      cell_mean[i][j] = s / nd;
      grand += s;
    }
  grand /= static_cast<double>(r.observations);

  r.means_a.assign(na, 0.0);
  r.means_b.assign(nb, 0.0);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      r.means_a[i] += cell_mean[i][j] / static_cast<double>(nb);
      r.means_b[j] += cell_mean[i][j] / static_cast<double>(na);
    }

  double ss_a = 0.0, ss_b = 0.0, ss_ab = 0.0, ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < na; ++i) ss_a += (r.means_a[i] - grand) * (r.means_a[i] - grand);
  ss_a *= nd * static_cast<double>(nb);
  for (std::size_t j = 0; j < nb; ++j) ss_b += (r.means_b[j] - grand) * (r.means_b[j] - grand);
  ss_b *= nd * static_cast<double>(na);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const double inter = cell_mean[i][j] - r.means_a[i] - r.means_b[j] + grand;
      ss_ab += nd * inter * inter;
      for (double v : cells[i][j]) {
        ss_res += (v - cell_mean[i][j]) * (v - cell_mean[i][j]);
        ss_tot += (v - grand) * (v - grand);
      }
    }
  r.ss_total = ss_tot;

  const double df_a = static_cast<double>(na - 1);
  const double df_b = static_cast<double>(nb - 1);
  const double df_res = static_cast<double>(na * nb * (n - 1));
  r.residual.source = "Residual";
  r.residual.ss = ss_res;
  r.residual.df = df_res;
  r.residual.ms = ss_res / df_res;
  r.residual.f = 0.0;
  r.residual.p = 1.0;
  // Treat round-off-level residual variance as exactly zero.
  const double ms_res = ss_res <= 1e-24 * std::max(1.0, ss_tot) ? 0.0 : r.residual.ms;
  r.factor_a = make_row(name_a, ss_a, df_a, ms_res, df_res);
  r.factor_b = make_row(name_b, ss_b, df_b, ms_res, df_res);
  r.interaction = make_row(name_a + "x" + name_b, ss_ab, df_a * df_b, ms_res, df_res);
  return r;
}

std::vector<TukeyComparison> tukey_hsd(std::span<const LevelMean> means, double mse, double df_resid,
                                       double n_per_level) {
  if (means.size() < 2) throw ConfigError("tukey: need at least 2 levels");
  if (!(mse > 0.0)) throw ConfigError("tukey: residual mean square must be positive");
  if (!(df_resid >= 1.0)) throw ConfigError("tukey: residual df must be >= 1");
  if (!(n_per_level > 0.0)) throw ConfigError("tukey: n per level must be positive");
  const double se = std::sqrt(mse / n_per_level);
  std::vector<TukeyComparison> out;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j) {
      TukeyComparison c;
      c.level_i = means[i].level;
      c.level_j = means[j].level;
      c.mean_diff = means[i].mean - means[j].mean;
      c.q = std::abs(c.mean_diff) / se;
      c.p = c.q == 0.0 ? 1.0 : std::clamp(1.0 - studentized_range_cdf(c.q, means.size(), df_resid), 0.0, 1.0);
      c.significant = c.p < 0.05;
      if (c.significant)
        c.direction = c.mean_diff < 0.0 ? c.level_i + "<" + c.level_j : c.level_j + "<" + c.level_i;
      else
        c.direction = "-";
      out.push_back(std::move(c));
    }
  return out;
}

std::vector<TukeyComparison> tukey_for_factor_a(const AnovaResult& anova) {
  return tukey_for_levels(anova.levels_a, anova.means_a, anova,
                          static_cast<double>(anova.per_cell * anova.levels_b.size()));
}

std::vector<TukeyComparison> tukey_for_factor_b(const AnovaResult& anova) {
  return tukey_for_levels(anova.levels_b, anova.means_b, anova,
                          static_cast<double>(anova.per_cell * anova.levels_a.size()));
}

void write_curve_csv(const LearningCurve& curve, std::ostream& out) {
  out << "group,session,count,mean_expert_prob,std_expert_prob,mean_entropy,std_entropy,degenerate\n";
  for (const auto& p : curve.points)
    out << p.group << ',' << p.session << ',' << p.count << ',' << csv::format(p.mean_expert_prob) << ','
        << csv::format(p.std_expert_prob) << ',' << csv::format(p.mean_entropy) << ','
        << csv::format(p.std_entropy) << ',' << (p.degenerate ? 1 : 0) << '\n';
}

void write_anova_csv(const AnovaResult& anova, std::ostream& out) {
  out << "source,ss,df,ms,f,p\n";
  for (const AnovaRow* row : {&anova.factor_a, &anova.factor_b, &anova.interaction, &anova.residual})
    out << row->source << ',' << csv::format(row->ss) << ',' << csv::format(row->df) << ','
        << csv::format(row->ms) << ',' << csv::format(row->f) << ',' << csv::format(row->p) << '\n';
}

void write_tukey_csv(const std::string& factor, std::span<const TukeyComparison> rows,
                     std::ostream& out, bool header) {
  if (header) out << "factor,level_i,level_j,mean_diff,q,p,significant,direction\n";
  for (const auto& c : rows)
    out << factor << ',' << c.level_i << ',' << c.level_j << ',' << csv::format(c.mean_diff) << ','
        << csv::format(c.q) << ',' << csv::format(c.p) << ',' << (c.significant ? 1 : 0) << ','
        << c.direction << '\n';
}

std::string learning_curve_svg(const LearningCurve& curve) {
  constexpr double kWidth = 640, kHeight = 400, kLeft = 60, kRight = 150, kTop = 30, kBottom = 50;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  int s_min = 0, s_max = 1;
  if (!curve.points.empty()) {
    s_min = s_max = curve.points.front().session;
    for (const auto& p : curve.points) {
      s_min = std::min(s_min, p.session);
      s_max = std::max(s_max, p.session);
    }
    if (s_max == s_min) ++s_max;
  }
  auto x_of = [&](int s) { return kLeft + plot_w * (s - s_min) / static_cast<double>(s_max - s_min); };
  auto y_of = [&](double v) { return kTop + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::map<std::string, std::vector<const CurvePoint*>> groups;
  for (const auto& p : curve.points) groups[p.group].push_back(&p);
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream svg;
  svg.precision(6);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << y_of(v) + 4
        << "\" font-size=\"11\" text-anchor=\"end\">" << v << "</text>\n";
  }
  for (int s = s_min; s <= s_max; ++s)
    svg << "<text x=\"" << x_of(s) << "\" y=\"" << kTop + plot_h + 16
        << "\" font-size=\"11\" text-anchor=\"middle\">" << s << "</text>\n";
  svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 10
      << "\" font-size=\"12\" text-anchor=\"middle\">session</text>\n"
      << "<text x=\"15\" y=\"" << kTop + plot_h / 2 << "\" font-size=\"12\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 15 " << kTop + plot_h / 2 << ")\">expert probability</text>\n";

  std::size_t gi = 0;
  for (const auto& [name, pts] : groups) {
    const char* color = kColors[gi % 5];
    svg << "<g stroke=\"" << color << "\" fill=\"" << color << "\">\n<polyline fill=\"none\" points=\"";
    for (const auto* p : pts) svg << x_of(p->session) << ',' << y_of(p->mean_expert_prob) << ' ';
    svg << "\"/>\n";
    for (const auto* p : pts) {
      const double x = x_of(p->session);
      svg << "<line x1=\"" << x << "\" y1=\"" << y_of(p->mean_expert_prob - p->std_expert_prob)
          << "\" x2=\"" << x << "\" y2=\"" << y_of(p->mean_expert_prob + p->std_expert_prob) << "\"/>\n"
          << "<circle cx=\"" << x << "\" cy=\"" << y_of(p->mean_expert_prob) << "\" r=\"3\"/>\n";
    }
    const double ly = kTop + 16.0 * static_cast<double>(gi);
    svg << "<text x=\"" << kLeft + plot_w + 12 << "\" y=\"" << ly + 4 << "\" font-size=\"12\" stroke=\"none\">"
        << xml_escape(name) << "</text>\n</g>\n";
    ++gi;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace kinadapt
