#pragma once

// Files written by the harness: CSV tables that start with a
// "# config_hash=" comment line and a header row, and JSON sidecars.
// Missing values are written as NaN.

#include <Eigen/Core>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "datasets.hpp"
#include "errors.hpp"

namespace epg {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// FNV-1a 64 of a string, as 16 hex digits.
inline std::string fnv1a_hex(const std::string &s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const json &j) { return fnv1a_hex(j.dump()); }

/// Shortest text that reads back to the same double; NaN as "NaN".
inline std::string fmt_double(double v) {
  if (std::isnan(v))
    return "NaN";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvWriter {
public:
  CsvWriter(const fs::path &path, const std::string &hash,
            const std::vector<std::string> &header)
      : out_(path), width_(header.size()) {
    if (!out_)
      throw InvalidArgument("cannot open " + path.string() + " for writing");
    out_ << "# config_hash=" << hash << '\n';
    write_row(header);
  }

  void write_row(const std::vector<std::string> &cells) {
    if (cells.size() != width_)
      throw LengthMismatch("CsvWriter: row width differs from header");
    for (std::size_t c = 0; c < cells.size(); ++c)
      out_ << (c ? "," : "") << cells[c];
    out_ << '\n';
  }

private:
  std::ofstream out_;
  std::size_t width_;
};

struct CsvTable {
  std::string hash;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string &name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name)
        return c;
    throw InvalidArgument("CSV has no column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

inline CsvTable read_csv(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw InvalidArgument("cannot open " + path.string());
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    if (line[0] == '#') {
      const std::string key = "# config_hash=";
      if (line.rfind(key, 0) == 0)
        t.hash = line.substr(key.size());
      continue;
    }
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ShapeMismatch(path.string() + ": row width differs from header");
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty())
    throw InvalidArgument(path.string() + ": missing header row");
  return t;
}

inline double parse_double(const std::string &s) {
  if (s == "NaN" || s == "nan" || s.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size())
    throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

inline std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw InvalidArgument("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const fs::path &path) { return json::parse(read_text(path)); }

inline void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path);
  if (!out)
    throw InvalidArgument("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// json helpers for Eigen
// ---------------------------------------------------------------------------

inline json to_json(const VectorXd &v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const MatrixXd &m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    rows.push_back(to_json(VectorXd(m.row(r).transpose())));
  return rows;
}

inline VectorXd vector_from_json(const json &j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), Index(v.size()));
}

inline MatrixXd matrix_from_json(const json &j) {
  if (j.empty())
    return {};
  MatrixXd m(Index(j.size()), Index(j[0].size()));
  for (Index r = 0; r < m.rows(); ++r) {
    const VectorXd row = vector_from_json(j[std::size_t(r)]);
    if (row.size() != m.cols())
      throw ShapeMismatch("ragged matrix in json");
    m.row(r) = row.transpose();
  }
  return m;
}

// ---------------------------------------------------------------------------
// datasets on disk: <dir>/data.csv (rows = series or items) + <dir>/truth.json
// ---------------------------------------------------------------------------

inline json ts_gen_json(const TsGenParams &g) {
  return {{"n", g.n}, {"T", g.T}, {"K", g.K}, {"sigma_x2", g.sigma_x2},
          {"sigma_y2", g.sigma_y2}, {"a", g.a}, {"lambda", g.lambda}};
}

inline json mvt_gen_json(const MvtGenParams &g) {
  return {{"n", g.n}, {"K", g.K}, {"d", g.d}, {"dof", g.dof}, {"mean_scale", g.mean_scale}};
}

inline void write_matrix_csv(const fs::path &path, const std::string &hash,
                             const std::string &prefix, const std::vector<VectorXd> &rows,
                             Index width) {
  std::vector<std::string> header;
  for (Index c = 0; c < width; ++c)
    header.push_back(prefix + std::to_string(c));
  CsvWriter w(path, hash, header);
  std::vector<std::string> cells(static_cast<std::size_t>(width));
  for (const auto &r : rows) {
    for (Index c = 0; c < width; ++c)
      cells[std::size_t(c)] = fmt_double(r(c));
    w.write_row(cells);
  }
}

inline std::vector<VectorXd> read_matrix_csv(const fs::path &path) {
  const CsvTable t = read_csv(path);
  std::vector<VectorXd> rows;
  for (const auto &r : t.rows) {
    VectorXd v(Index(r.size()));
    for (std::size_t c = 0; c < r.size(); ++c)
      v(Index(c)) = parse_double(r[c]);
    rows.push_back(std::move(v));
  }
  return rows;
}

inline void write_ts_dataset(const fs::path &dir, const TsDataset &d, const json &generator,
                             std::uint64_t seed) {
  fs::create_directories(dir);
  json meta = {{"kind", "ts"}, {"generator", generator}, {"seed", seed}};
  const std::string hash = config_hash(meta);
  std::vector<VectorXd> rows;
  for (const auto &s : d.series) {
    VectorXd v = s.values;
    for (Index t = 0; t < v.size(); ++t)
      if (!s.observed[std::size_t(t)])
        v(t) = std::numeric_limits<double>::quiet_NaN();
    rows.push_back(std::move(v));
  }
  write_matrix_csv(dir / "data.csv", hash, "t", rows, d.length());
  json params = json::array();
  for (const auto &p : d.params)
    params.push_back({{"a", p.a}, {"lambda", p.lambda}, {"sigma_x2", p.sigma_x2},
                      {"sigma_y2", p.sigma_y2}, {"init_var", p.init_var}});
  meta["config_hash"] = hash;
  meta["K"] = d.K;
  meta["z"] = d.z;
  meta["params"] = params;
  meta["eta"] = to_json(d.eta);
  meta["x"] = to_json(d.x);
  write_json(dir / "truth.json", meta);
}

/// Reads data.csv; truth.json is optional (z empty and K = 0 without it).
inline TsDataset read_ts_dataset(const fs::path &dir) {
  TsDataset d;
  for (auto &v : read_matrix_csv(dir / "data.csv"))
    d.series.push_back(SeriesData::from_values(std::move(v)));
  if (!fs::exists(dir / "truth.json"))
    return d;
  const json t = read_json(dir / "truth.json");
  if (t.at("kind") != "ts")
    throw InvalidArgument(dir.string() + ": not a time-series dataset");
  d.K = t.at("K").get<int>();
  d.z = t.at("z").get<std::vector<int>>();
  for (const auto &p : t.at("params")) {
    SsmParams s;
    s.a = p.at("a");
    s.lambda = p.at("lambda");
    s.sigma_x2 = p.at("sigma_x2");
    s.sigma_y2 = p.at("sigma_y2");
    s.init_var = p.at("init_var");
    d.params.push_back(s);
  }
  d.eta = matrix_from_json(t.at("eta"));
  d.x = matrix_from_json(t.at("x"));
  if (d.z.size() != d.series.size() || d.params.size() != d.series.size())
    throw LengthMismatch(dir.string() + ": truth.json and data.csv disagree on n");
  return d;
}

inline void write_mvt_dataset(const fs::path &dir, const MvtDataset &d, const json &generator,
                              std::uint64_t seed) {
  fs::create_directories(dir);
  json meta = {{"kind", "mvt"}, {"generator", generator}, {"seed", seed}};
  const std::string hash = config_hash(meta);
  write_matrix_csv(dir / "data.csv", hash, "y", d.y, d.dim());
  json params = json::array();
  for (const auto &p : d.params)
    params.push_back({{"mu", to_json(p.mu)}, {"sigma", to_json(p.sigma)}});
  meta["config_hash"] = hash;
  meta["K"] = d.K;
  meta["dof"] = d.dof;
  meta["z"] = d.z;
  meta["params"] = params;
  write_json(dir / "truth.json", meta);
}

inline MvtDataset read_mvt_dataset(const fs::path &dir) {
  MvtDataset d;
  d.y = read_matrix_csv(dir / "data.csv");
  for (const auto &v : d.y)
    if (!v.allFinite())
      throw InvalidArgument(dir.string() + ": missing values are not supported for mvt data");
  if (!fs::exists(dir / "truth.json"))
    return d;
  const json t = read_json(dir / "truth.json");
  if (t.at("kind") != "mvt")
    throw InvalidArgument(dir.string() + ": not an mvt dataset");
  d.K = t.at("K").get<int>();
  d.dof = t.at("dof").get<double>();
  d.z = t.at("z").get<std::vector<int>>();
  for (const auto &p : t.at("params"))
    d.params.push_back({vector_from_json(p.at("mu")), matrix_from_json(p.at("sigma"))});
  if (d.z.size() != d.y.size())
    throw LengthMismatch(dir.string() + ": truth.json and data.csv disagree on n");
  return d;
}

} // namespace epg
