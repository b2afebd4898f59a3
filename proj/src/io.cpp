#include "sae/io.hpp"

#include "sae/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace sae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char ch = line[k];
    if (quoted) {
      if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        field += '"';
        ++k;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(trim(field));
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path);
  return f;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

int index_of(std::vector<std::string>& ids, std::unordered_map<std::string, int>& lookup,
             const std::string& id) {
  auto [it, inserted] = lookup.emplace(id, static_cast<int>(ids.size()));
  if (inserted) ids.push_back(id);
  return it->second;
}

struct SampleRows {
  std::vector<std::string> unit_ids;
  std::vector<std::string> area;
  std::vector<std::string> block;
  std::vector<std::string> covariates;
  Matrix X;
  Vector y_star;
};

SampleRows read_sample_rows(const std::string& path) {
  const CsvTable t = read_csv(path);
  SampleRows r;
  r.covariates = covariate_columns(t);
  const int cu = t.column("unit_id"), ca = t.column("area_id"), cb = t.column("block_id");
  const int cy = t.column("y_star");
  std::vector<int> cx;
  for (const auto& name : r.covariates) cx.push_back(t.column(name));
  const int n = static_cast<int>(t.rows.size());
  if (n == 0) throw InputError(path + ": no rows");
  r.X.resize(n, cx.size() + 1);
  r.y_star.resize(n);
  for (int j = 0; j < n; ++j) {
    r.unit_ids.push_back(t.text(j, cu));
    r.area.push_back(t.text(j, ca));
    r.block.push_back(t.text(j, cb));
    r.X(j, 0) = 1.0;
    for (std::size_t k = 0; k < cx.size(); ++k) r.X(j, k + 1) = t.number(j, cx[k]);
    r.y_star(j) = t.number(j, cy);
  }
  return r;
}

// Fills X, y, labels and lambdas of `s` from the rows; areas are registered
// in `area_ids` order when given, otherwise by first appearance.
void fill_sample(LinkedSample& s, const SampleRows& r, const Paradata& para,
                 std::unordered_map<std::string, int>& area_lookup, const std::string& path) {
  s.X = r.X;
  s.y_star = r.y_star;
  s.block_ids = para.block_ids;
  s.block_lambda = para.lambda;
  for (std::size_t j = 0; j < r.unit_ids.size(); ++j) {
    const int q = para.find(r.block[j]);
    if (q < 0) throw InputError(path + ": block " + r.block[j] + " has no lambda in the paradata");
    s.block_of.push_back(q);
    s.area_of.push_back(index_of(s.area_ids, area_lookup, r.area[j]));
  }
}

}  // namespace

bool CsvTable::has(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw InputError(path + ": missing column '" + name + "'");
  return static_cast<int>(it - header.begin());
}

const std::string& CsvTable::text(std::size_t row, int col) const { return rows.at(row).at(col); }

double CsvTable::number(std::size_t row, int col) const {
  const std::string& s = text(row, col);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw InputError(path + ": column '" + header[col] + "' row " + std::to_string(row + 2) +
                     ": not a finite number: '" + s + "'");
  }
  return v;
}

int CsvTable::integer(std::size_t row, int col) const {
  const std::string& s = text(row, col);
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError(path + ": column '" + header[col] + "' row " + std::to_string(row + 2) +
                     ": not an integer: '" + s + "'");
  }
  return v;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read " + path);
  CsvTable t;
  t.path = path;
  std::string line;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    if (t.header.empty()) {
      t.header = split_line(line);
      continue;
    }
    auto fields = split_line(line);
    if (fields.size() != t.header.size()) {
      throw InputError(path + ": row " + std::to_string(t.rows.size() + 2) + " has " +
                       std::to_string(fields.size()) + " fields, header has " +
                       std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw InputError(path + ": empty file");
  return t;
}

std::vector<std::string> covariate_columns(const CsvTable& t) {
  std::vector<std::string> out;
  for (int k = 1;; ++k) {
    const std::string name = "x" + std::to_string(k);
    if (!t.has(name)) break;
    out.push_back(name);
  }
  for (const auto& h : t.header) {
    if (h.size() > 1 && h[0] == 'x' && std::all_of(h.begin() + 1, h.end(), ::isdigit) &&
        std::find(out.begin(), out.end(), h) == out.end()) {
      throw InputError(t.path + ": covariate columns must be x1..xp without gaps, found '" + h + "'");
    }
  }
  return out;
}

int Paradata::find(const std::string& id) const {
  const auto it = std::find(block_ids.begin(), block_ids.end(), id);
  return it == block_ids.end() ? -1 : static_cast<int>(it - block_ids.begin());
}

Paradata read_paradata(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int cb = t.column("block_id"), cl = t.column("lambda");
  const int cv = t.has("var_lambda") ? t.column("var_lambda") : -1;
  const int cm = t.has("m_q") || t.has("correct_q") ? t.column("m_q") : -1;
  const int cc = cm >= 0 ? t.column("correct_q") : -1;
  Paradata p;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (p.find(t.text(r, cb)) >= 0) throw InputError(path + ": duplicate block " + t.text(r, cb));
    p.block_ids.push_back(t.text(r, cb));
    const double l = t.number(r, cl);
    if (l < 0.0 || l > 1.0) throw InputError(path + ": column 'lambda' outside [0, 1] for block " + t.text(r, cb));
    p.lambda.push_back(l);
    if (cv >= 0) {
      const double v = t.number(r, cv);
      if (v < 0.0) throw InputError(path + ": column 'var_lambda' negative for block " + t.text(r, cb));
      p.var_lambda.push_back(v);
    }
    if (cm >= 0) {
      const AuditBlock b{t.text(r, cb), t.integer(r, cm), t.integer(r, cc)};
      if (b.m < 1) throw InputError(path + ": column 'm_q' must be positive for block " + b.block_id);
      if (b.correct < 0 || b.correct > b.m) {
        throw InputError(path + ": column 'correct_q' outside [0, m_q] for block " + b.block_id);
      }
      p.audit.push_back(b);
    }
  }
  if (p.block_ids.empty()) throw InputError(path + ": no blocks");
  return p;
}

void write_paradata(const std::string& path, const std::vector<LambdaEstimate>& estimates) {
  auto f = open_out(path);
  f << "block_id,lambda,var_lambda\n";
  for (const auto& e : estimates) {
    f << quote(e.block_id) << ',' << format_double(e.lambda_hat) << ',' << format_double(e.variance) << '\n';
  }
}

LoadedSample load_linked_sample(const std::string& sample_csv, const std::string& paradata_csv,
                                const std::string& aggregates_csv) {
  const Paradata para = read_paradata(paradata_csv);
  const SampleRows rows = read_sample_rows(sample_csv);
  const CsvTable agg = read_csv(aggregates_csv);
  const int p = static_cast<int>(rows.covariates.size());

  LoadedSample out;
  LinkedSample& s = out.sample;
  std::unordered_map<std::string, int> areas;
  const int ca = agg.column("area_id"), cb = agg.column("block_id");
  const int cN = agg.column("N_iq"), cn = agg.column("n_iq");
  std::vector<int> cx;
  for (int k = 1; k <= p; ++k) cx.push_back(agg.column("xbar_iq_" + std::to_string(k)));
  if (agg.has("xbar_iq_" + std::to_string(p + 1))) {
    throw InputError(aggregates_csv + ": more xbar_iq columns than covariates in " + sample_csv);
  }
  for (std::size_t r = 0; r < agg.rows.size(); ++r) {
    CellInfo cell;
    cell.area = index_of(s.area_ids, areas, agg.text(r, ca));
    cell.block = para.find(agg.text(r, cb));
    if (cell.block < 0) {
      throw InputError(aggregates_csv + ": block " + agg.text(r, cb) + " has no lambda in the paradata");
    }
    cell.N = agg.integer(r, cN);
    cell.n = agg.integer(r, cn);
    cell.xbar.resize(p + 1);
    cell.xbar(0) = 1.0;
    for (int k = 0; k < p; ++k) cell.xbar(k + 1) = agg.number(r, cx[k]);
    s.cells.push_back(std::move(cell));
  }
  const std::size_t known_areas = s.area_ids.size();
  fill_sample(s, rows, para, areas, sample_csv);
  if (s.area_ids.size() != known_areas) {
    throw InputError(sample_csv + ": area " + s.area_ids.back() + " has no rows in " + aggregates_csv);
  }
  s.build();
  out.unit_ids = rows.unit_ids;
  out.covariates = rows.covariates;
  out.lambda_variance = para.var_lambda;
  return out;
}

LoadedSample load_sample_with_population(const std::string& sample_csv, const std::string& paradata_csv,
                                         const std::string& population_csv) {
  const Paradata para = read_paradata(paradata_csv);
  const SampleRows rows = read_sample_rows(sample_csv);
  const PopulationFrame pop = read_population(population_csv, para);
  const int pp = static_cast<int>(pop.X.cols());
  if (pp != rows.X.cols()) throw InputError(population_csv + ": covariates differ from " + sample_csv);

  LoadedSample out;
  LinkedSample& s = out.sample;
  std::unordered_map<std::string, int> areas;
  for (const auto& a : pop.area_ids) index_of(s.area_ids, areas, a);
  const std::size_t known_areas = s.area_ids.size();
  fill_sample(s, rows, para, areas, sample_csv);
  if (s.area_ids.size() != known_areas) {
    throw InputError(sample_csv + ": area " + s.area_ids.back() + " is not in " + population_csv);
  }

  std::unordered_map<std::string, int> unit_index;
  for (int j = 0; j < pop.size(); ++j) unit_index.emplace(pop.unit_ids[j], j);
  std::map<std::pair<int, int>, int> cell_index;
  std::vector<int> sampled(pop.size(), 0);
  for (int j = 0; j < pop.size(); ++j) {
    const auto key = std::make_pair(pop.area_of[j], pop.block_of[j]);
    auto [it, inserted] = cell_index.emplace(key, static_cast<int>(s.cells.size()));
    if (inserted) {
      CellInfo c;
      c.area = key.first;
      c.block = key.second;
      c.xbar = Vector::Zero(pp);
      s.cells.push_back(std::move(c));
    }
    auto& c = s.cells[it->second];
    ++c.N;
    c.xbar += pop.X.row(j).transpose();
  }
  for (auto& c : s.cells) c.xbar /= c.N;
  for (std::size_t j = 0; j < rows.unit_ids.size(); ++j) {
    const auto it = unit_index.find(rows.unit_ids[j]);
    if (it == unit_index.end()) {
      throw InputError(sample_csv + ": unit " + rows.unit_ids[j] + " is not in " + population_csv);
    }
    if (sampled[it->second]++) throw InputError(sample_csv + ": unit " + rows.unit_ids[j] + " listed twice");
    const int u = it->second;
    if (pop.area_of[u] != s.area_of[j] || pop.block_of[u] != s.block_of[j]) {
      throw InputError(sample_csv + ": unit " + rows.unit_ids[j] + " has a different area or block in " +
                       population_csv);
    }
    ++s.cells[cell_index.at({pop.area_of[u], pop.block_of[u]})].n;
  }
  s.build();
  out.unit_ids = rows.unit_ids;
  out.covariates = rows.covariates;
  out.lambda_variance = para.var_lambda;
  return out;
}

PopulationFrame read_population(const std::string& path, const Paradata& para) {
  const CsvTable t = read_csv(path);
  const auto covs = covariate_columns(t);
  const int cu = t.column("unit_id"), ca = t.column("area_id"), cb = t.column("block_id");
  const int cy = t.has("y") ? t.column("y") : -1;
  const int cys = t.has("y_star") ? t.column("y_star") : -1;
  std::vector<int> cx;
  for (const auto& c : covs) cx.push_back(t.column(c));
  const int N = static_cast<int>(t.rows.size());
  if (N == 0) throw InputError(path + ": no rows");

  PopulationFrame pop;
  pop.X.resize(N, cx.size() + 1);
  pop.y = Vector::Constant(N, std::nan(""));
  pop.y_star = pop.y;
  pop.mislinked.assign(N, 0);
  pop.block_ids = para.block_ids;
  pop.block_lambda = para.lambda;
  std::unordered_map<std::string, int> areas;
  for (int j = 0; j < N; ++j) {
    pop.unit_ids.push_back(t.text(j, cu));
    pop.area_of.push_back(index_of(pop.area_ids, areas, t.text(j, ca)));
    const int q = para.find(t.text(j, cb));
    if (q < 0) throw InputError(path + ": block " + t.text(j, cb) + " has no lambda in the paradata");
    pop.block_of.push_back(q);
    pop.X(j, 0) = 1.0;
    for (std::size_t k = 0; k < cx.size(); ++k) pop.X(j, k + 1) = t.number(j, cx[k]);
    if (cy >= 0) pop.y(j) = t.number(j, cy);
    pop.y_star(j) = cys >= 0 ? t.number(j, cys) : pop.y(j);
  }
  return pop;
}

std::vector<AuditBlock> read_audit(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int cb = t.column("block_id");
  std::vector<AuditBlock> out;
  auto block = [&](const std::string& id) -> AuditBlock& {
    for (auto& b : out) {
      if (b.block_id == id) return b;
    }
    out.push_back({id, 0, 0});
    return out.back();
  };
  if (t.has("m_q")) {
    const int cm = t.column("m_q"), cc = t.column("correct_q");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      AuditBlock& b = block(t.text(r, cb));
      b.m += t.integer(r, cm);
      b.correct += t.integer(r, cc);
    }
  } else {
    const int cc = t.column("correct");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const int v = t.integer(r, cc);
      if (v != 0 && v != 1) throw InputError(path + ": column 'correct' must be 0 or 1");
      AuditBlock& b = block(t.text(r, cb));
      ++b.m;
      b.correct += v;
    }
  }
  for (const auto& b : out) {
    if (b.m <= 0) throw InputError(path + ": block " + b.block_id + " has no audited links");
    if (b.correct < 0 || b.correct > b.m) throw InputError(path + ": block " + b.block_id + ": correct_q outside [0, m_q]");
  }
  return out;
}

void write_sample_files(const LinkedSample& s, const std::vector<std::string>& unit_ids,
                        const std::string& sample_csv, const std::string& paradata_csv,
                        const std::string& aggregates_csv, const std::vector<double>& lambda_variance) {
  const int p = s.p() - 1;
  {
    auto f = open_out(sample_csv);
    f << "unit_id,area_id,block_id";
    for (int k = 1; k <= p; ++k) f << ",x" << k;
    f << ",y_star\n";
    for (int j = 0; j < s.size(); ++j) {
      f << quote(unit_ids[j]) << ',' << quote(s.area_ids[s.area_of[j]]) << ','
        << quote(s.block_ids[s.block_of[j]]);
      for (int k = 1; k <= p; ++k) f << ',' << format_double(s.X(j, k));
      f << ',' << format_double(s.y_star(j)) << '\n';
    }
  }
  {
    auto f = open_out(paradata_csv);
    f << "block_id,lambda" << (lambda_variance.empty() ? "" : ",var_lambda") << '\n';
    for (int q = 0; q < s.num_blocks(); ++q) {
      f << quote(s.block_ids[q]) << ',' << format_double(s.block_lambda[q]);
      if (!lambda_variance.empty()) f << ',' << format_double(lambda_variance[q]);
      f << '\n';
    }
  }
  {
    auto f = open_out(aggregates_csv);
    f << "area_id,block_id,N_iq,n_iq";
    for (int k = 1; k <= p; ++k) f << ",xbar_iq_" << k;
    f << '\n';
    for (const auto& c : s.cells) {
      f << quote(s.area_ids[c.area]) << ',' << quote(s.block_ids[c.block]) << ',' << c.N << ',' << c.n;
      for (int k = 1; k <= p; ++k) f << ',' << format_double(c.xbar(k));
      f << '\n';
    }
  }
}

void write_population(const PopulationFrame& pop, const std::string& path) {
  auto f = open_out(path);
  const int p = static_cast<int>(pop.X.cols()) - 1;
  f << "unit_id,area_id,block_id";
  for (int k = 1; k <= p; ++k) f << ",x" << k;
  f << ",y,y_star,mislinked\n";
  for (int j = 0; j < pop.size(); ++j) {
    f << quote(pop.unit_ids[j]) << ',' << quote(pop.area_ids[pop.area_of[j]]) << ','
      << quote(pop.block_ids[pop.block_of[j]]);
    for (int k = 1; k <= p; ++k) f << ',' << format_double(pop.X(j, k));
    f << ',' << format_double(pop.y(j)) << ',' << format_double(pop.y_star(j)) << ','
      << static_cast<int>(pop.mislinked[j]) << '\n';
  }
}

void write_predictions(const std::string& path, const std::vector<std::string>& area_ids,
                       const std::vector<AreaPrediction>& predictions,
                       const std::vector<std::string>& component_names) {
  auto f = open_out(path);
  f << "area_id,estimator,point,mse,rmse";
  for (const auto& c : component_names) f << ',' << c;
  f << '\n';
  for (const auto& p : predictions) {
    f << quote(area_ids.at(p.area)) << ',' << p.estimator << ',' << format_double(p.point) << ','
      << format_double(p.mse) << ',' << format_double(std::sqrt(std::max(p.mse, 0.0)));
    for (std::size_t k = 0; k < component_names.size(); ++k) {
      f << ',' << (k < p.components.size() ? format_double(p.components[k]) : std::string("NA"));
    }
    f << '\n';
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace sae
