#include "sepiv/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sepiv/stats.hpp"

namespace sepiv {

Dataset::Dataset(std::vector<double> y, std::vector<int> a, std::vector<int> z, RowMatrix x)
    : y_(std::move(y)), a_(std::move(a)), z_(std::move(z)), x_(std::move(x)) {
  const std::size_t n = y_.size();
  if (a_.size() != n || z_.size() != n || static_cast<std::size_t>(x_.rows()) != n)
    fail(ErrorCode::InvalidArgument, "dataset columns have different lengths");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y_[i])) fail(ErrorCode::InvalidArgument, "non-finite outcome at row " + std::to_string(i));
    if (a_[i] != 0 && a_[i] != 1) fail(ErrorCode::NonBinary, "treatment not in {0,1} at row " + std::to_string(i));
    if (z_[i] != 0 && z_[i] != 1) fail(ErrorCode::NonBinary, "instrument not in {0,1} at row " + std::to_string(i));
  }
  if (!x_.allFinite()) fail(ErrorCode::InvalidArgument, "non-finite covariate");
}

Dataset Dataset::from_rows(const std::vector<ObservedRow>& rows, int d) {
  std::vector<double> y;
  std::vector<int> a, z;
  RowMatrix x(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (static_cast<int>(r.x.size()) != d)
      fail(ErrorCode::InvalidArgument, "row " + std::to_string(i) + " has covariate length " +
                                           std::to_string(r.x.size()) + ", expected " + std::to_string(d));
    y.push_back(r.y);
    a.push_back(r.a);
    z.push_back(r.z);
    for (int j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), j) = r.x[static_cast<std::size_t>(j)];
  }
  return Dataset(std::move(y), std::move(a), std::move(z), std::move(x));
}

ObservedRow Dataset::row(std::size_t i) const {
  auto xi = x(i);
  return {y_[i], a_[i], z_[i], std::vector<double>(xi.begin(), xi.end())};
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  std::vector<double> y;
  std::vector<int> a, z;
  y.reserve(idx.size());
  RowMatrix x(static_cast<Eigen::Index>(idx.size()), x_.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t i = idx[k];
    y.push_back(y_[i]);
    a.push_back(a_[i]);
    z.push_back(z_[i]);
    x.row(static_cast<Eigen::Index>(k)) = x_.row(static_cast<Eigen::Index>(i));
  }
  return Dataset(std::move(y), std::move(a), std::move(z), std::move(x));
}

ValidationReport validate(const Dataset& data) {
  ValidationReport rep;
  rep.n = data.size();
  rep.d = data.dim();
  if (rep.n == 0) fail(ErrorCode::EmptyArm, "empty dataset");
  rep.y_min = *std::min_element(data.ys().begin(), data.ys().end());
  rep.y_max = *std::max_element(data.ys().begin(), data.ys().end());
  for (std::size_t i = 0; i < rep.n; ++i) ++rep.cell[data.a(i)][data.z(i)];
  for (int a = 0; a < 2; ++a)
    for (int z = 0; z < 2; ++z)
      if (rep.cell[a][z] == 0)
        fail(ErrorCode::EmptyArm, "no rows with a=" + std::to_string(a) + ", z=" + std::to_string(z));
  return rep;
}

int OutcomeGrid::find(double y) const {
  const double* b = points.data();
  const double* e = b + points.size();
  const double* it = std::lower_bound(b, e, y);
  if (it != e && *it == y) return static_cast<int>(it - b);
  return -1;
}

double OutcomeGrid::interpolate(const VectorXd& values, double y) const {
  const int m = size();
  if (y <= points[0]) return values[0];
  if (y >= points[m - 1]) return values[m - 1];
  const double* b = points.data();
  const int hi = static_cast<int>(std::upper_bound(b, b + m, y) - b);
  const int lo = hi - 1;
  const double t = (y - points[lo]) / (points[hi] - points[lo]);
  return values[lo] + t * (values[hi] - values[lo]);
}

OutcomeGrid make_discrete_grid(std::vector<double> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 2) fail(ErrorCode::DegenerateOutcome, "outcome takes a single value");
  OutcomeGrid g;
  g.kind = GridKind::discrete;
  g.points = Eigen::Map<VectorXd>(pts.data(), static_cast<Eigen::Index>(pts.size()));
  g.weights = VectorXd::Ones(g.points.size());
  return g;
}

OutcomeGrid make_continuous_grid(double lo, double hi, int m) {
  if (m < 2 || !(hi > lo)) fail(ErrorCode::InvalidArgument, "continuous grid needs m >= 2 and hi > lo");
  OutcomeGrid g;
  g.kind = GridKind::continuous;
  g.points = VectorXd::LinSpaced(m, lo, hi);
  const double step = (hi - lo) / (m - 1);
  g.weights = VectorXd::Constant(m, step);
  g.weights[0] = g.weights[m - 1] = step / 2;
  return g;
}

OutcomeGrid make_outcome_grid(const Dataset& data, const RunConfig& config) {
  std::vector<double> ys = data.ys();
  std::vector<double> uniq = ys;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < 2) fail(ErrorCode::DegenerateOutcome, "all outcomes are equal");
  if (static_cast<int>(uniq.size()) <= config.grid_size) return make_discrete_grid(std::move(uniq));
  const double h = silverman_bandwidth(ys, 1);
  return make_continuous_grid(uniq.front() - h, uniq.back() + h, config.grid_size);
}

void RunConfig::check() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::ConfigError, m); };
  if (k_folds < 2) bad("k_folds must be >= 2");
  if (grid_size < 2) bad("grid_size must be >= 2");
  if (!(fixed_point.tol > 0)) bad("fixed_point.tol must be > 0");
  if (fixed_point.max_iter < 1) bad("fixed_point.max_iter must be >= 1");
  if (!(clip.prob_floor > 0 && clip.prob_floor < 0.5)) bad("clip.prob_floor must lie in (0, 0.5)");
  if (!(clip.density_floor > 0)) bad("clip.density_floor must be > 0");
  if (median_reps < 1) bad("median_reps must be >= 1");
  if (!(relevance_tol >= 0)) bad("relevance_tol must be >= 0");
  if (!(level > 0 && level < 1)) bad("level must lie in (0, 1)");
  if (!(bandwidth_scale > 0)) bad("bandwidth_scale must be > 0");
  if (jobs < 1) bad("jobs must be >= 1");
  if (outcome_learner != "pooled_tilt" && outcome_learner != "cell_kernel")
    bad("outcome_learner must be pooled_tilt or cell_kernel");
}

namespace {

using nlohmann::json;

json to_json_value(const RunConfig& c) {
  return json{{"k_folds", c.k_folds},
              {"grid_size", c.grid_size},
              {"fixed_point", {{"tol", c.fixed_point.tol}, {"max_iter", c.fixed_point.max_iter}}},
              {"clip", {{"prob_floor", c.clip.prob_floor}, {"density_floor", c.clip.density_floor}}},
              {"seed", c.seed},
              {"median_reps", c.median_reps},
              {"relevance_tol", c.relevance_tol},
              {"level", c.level},
              {"bandwidth_scale", c.bandwidth_scale},
              {"outcome_learner", c.outcome_learner},
              {"jobs", c.jobs}};
}

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) fail(ErrorCode::ConfigError, "unknown config field " + where + it.key());
  }
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return to_json_value(config).dump(); }

RunConfig config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"k_folds", "grid_size", "fixed_point", "clip", "seed", "median_reps", "relevance_tol", "level",
                    "bandwidth_scale", "outcome_learner", "jobs"},
                   "");
    take(j, "k_folds", c.k_folds);
    take(j, "grid_size", c.grid_size);
    if (j.contains("fixed_point")) {
      const auto& f = j.at("fixed_point");
      reject_unknown(f, {"tol", "max_iter"}, "fixed_point.");
      take(f, "tol", c.fixed_point.tol);
      take(f, "max_iter", c.fixed_point.max_iter);
    }
    if (j.contains("clip")) {
      const auto& f = j.at("clip");
      reject_unknown(f, {"prob_floor", "density_floor"}, "clip.");
      take(f, "prob_floor", c.clip.prob_floor);
      take(f, "density_floor", c.clip.density_floor);
    }
    take(j, "seed", c.seed);
    take(j, "median_reps", c.median_reps);
    take(j, "relevance_tol", c.relevance_tol);
    take(j, "level", c.level);
    take(j, "bandwidth_scale", c.bandwidth_scale);
    take(j, "outcome_learner", c.outcome_learner);
    take(j, "jobs", c.jobs);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("config JSON: ") + e.what());
  }
  c.check();
  return c;
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
  const std::string t = trim(cell);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v))
    fail(ErrorCode::ParseError, "line " + std::to_string(line) + ", column '" + column + "': cannot parse '" + t + "'");
  return v;
}

int parse_binary(const std::string& cell, std::size_t line, const std::string& column) {
  const double v = parse_number(cell, line, column);
  if (v != 0.0 && v != 1.0)
    fail(ErrorCode::NonBinary, "line " + std::to_string(line) + ", column '" + column + "': value not in {0,1}");
  return static_cast<int>(v);
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, "missing CSV header");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
  auto header = split_commas(trim(line));
  for (auto& h : header) h = trim(h);
  const char* fixed[] = {"y", "a", "z"};
  for (std::size_t j = 0; j < 3; ++j) {
    if (j >= header.size()) fail(ErrorCode::ParseError, std::string("header is missing column '") + fixed[j] + "'");
    if (header[j] != fixed[j])
      fail(ErrorCode::ParseError, "header column " + std::to_string(j + 1) + " is '" + header[j] + "', expected '" +
                                      fixed[j] + "'");
  }
  const int d = static_cast<int>(header.size()) - 3;
  for (int j = 0; j < d; ++j) {
    const std::string want = "x" + std::to_string(j + 1);
    if (header[static_cast<std::size_t>(j) + 3] != want)
      fail(ErrorCode::ParseError, "header column " + std::to_string(j + 4) + " is '" +
                                      header[static_cast<std::size_t>(j) + 3] + "', expected '" + want + "'");
  }
  std::vector<double> y;
  std::vector<int> a, z;
  std::vector<double> xflat;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size())
      fail(ErrorCode::ParseError, "line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                      " cells, expected " + std::to_string(header.size()));
    y.push_back(parse_number(cells[0], lineno, "y"));
    a.push_back(parse_binary(cells[1], lineno, "a"));
    z.push_back(parse_binary(cells[2], lineno, "z"));
    for (std::size_t j = 3; j < cells.size(); ++j) xflat.push_back(parse_number(cells[j], lineno, header[j]));
  }
  RowMatrix x(static_cast<Eigen::Index>(y.size()), d);
  if (d > 0) x = Eigen::Map<RowMatrix>(xflat.data(), static_cast<Eigen::Index>(y.size()), d);
  return Dataset(std::move(y), std::move(a), std::move(z), std::move(x));
}

Dataset read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ParseError, "cannot open " + path);
  return read_csv(in);
}

void write_csv(std::ostream& out, const Dataset& data) {
  out << "y,a,z";
  for (int j = 0; j < data.dim(); ++j) out << ",x" << j + 1;
  out << '\n';
  char buf[64];
  auto put = [&](double v) {
    const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    out.write(buf, res.ptr - buf);
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    put(data.y(i));
    out << ',' << data.a(i) << ',' << data.z(i);
    for (double v : data.x(i)) {
      out << ',';
      put(v);
    }
    out << '\n';
  }
}

}  // namespace sepiv
