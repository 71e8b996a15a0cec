#include "ivc/cli_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ivc/approx_bias.hpp"
#include "ivc/rng.hpp"

namespace ivc::io {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

bool is_missing_token(const std::string& s) {
  std::string lower;
  for (char c : s) lower += static_cast<char>((c >= 'A' && c <= 'Z') ? c - 'A' + 'a' : c);
  return lower.empty() || lower == "na" || lower == "nan" || lower == "n/a" || lower == "null" || lower == "inf" ||
         lower == "-inf" || lower == "+inf" || lower == "infinity" || lower == "-infinity";
}

// Parsed cell: value, or nullopt when missing. Throws DataError on garbage.
std::optional<double> parse_cell(const std::string& s, std::size_t row, const std::string& column) {
  if (is_missing_token(s)) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw DataError("non-numeric cell '" + s + "' in column '" + column + "' at data row " + std::to_string(row));
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

class OutputTarget {
 public:
  OutputTarget(const std::string& path, std::ostream& fallback) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw ConfigError("cannot open output file '" + path + "'");
    }
    stream_ = path.empty() ? &fallback : &file_;
  }
  std::ostream& stream() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_ = nullptr;
};

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

const char* mode_name(InputMode m) { return m == InputMode::Raw ? "raw" : "partialled"; }

std::vector<NamedEstimator> all_names() { return {kAllNamedEstimators.begin(), kAllNamedEstimators.end()}; }

template <typename F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    log << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

// Prepared decompositions for a dataset, built on first use per mode.
class PreparedCache {
 public:
  explicit PreparedCache(const DesignData<double>& data) : data_(data) {}

  const PreparedDesign<double>& get(InputMode mode) {
    auto& slot = mode == InputMode::Raw ? raw_ : partialled_;
    if (!slot) slot.emplace(prepare(data_, mode));
    return *slot;
  }

 private:
  const DesignData<double>& data_;
  std::optional<PreparedDesign<double>> raw_;
  std::optional<PreparedDesign<double>> partialled_;
};

}  // namespace

void ColumnManifest::validate() const {
  if (outcome.empty()) throw ConfigError("manifest needs an outcome column");
  if (endogenous.empty()) throw ConfigError("manifest needs at least one endogenous column");
  if (instruments.size() < endogenous.size())
    throw ConfigError("manifest needs at least as many instruments as endogenous columns");
  std::set<std::string> seen;
  auto claim = [&](const std::string& name) {
    if (name.empty()) throw ConfigError("manifest column names must be non-empty");
    if (!seen.insert(name).second) throw ConfigError("column '" + name + "' is assigned to more than one role");
  };
  claim(outcome);
  for (const auto& c : endogenous) claim(c);
  for (const auto& c : controls) claim(c);
  for (const auto& c : instruments) claim(c);
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv_table(std::istream& in) {
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!have_header) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
          static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
        line.erase(0, 3);
      if (trim(line).empty()) continue;
      t.header = split_record(line);
      have_header = true;
      continue;
    }
    if (trim(line).empty()) continue;
    auto fields = split_record(line);
    if (fields.size() != t.header.size())
      throw DataError("data row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw DataError("file has no header row");
  return t;
}

CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv_table(in);
}

LoadedData load_csv(const std::string& path, const ColumnManifest& manifest) {
  manifest.validate();
  const CsvTable table = read_csv_table(path);

  auto indices = [&](const std::vector<std::string>& names) {
    std::vector<std::size_t> idx;
    for (const auto& n : names) idx.push_back(table.column(n));
    return idx;
  };
  const std::size_t y_col = table.column(manifest.outcome);
  const auto x_cols = indices(manifest.endogenous);
  const auto w_cols = indices(manifest.controls);
  const auto z_cols = indices(manifest.instruments);
  std::vector<std::size_t> all{y_col};
  all.insert(all.end(), x_cols.begin(), x_cols.end());
  all.insert(all.end(), w_cols.begin(), w_cols.end());
  all.insert(all.end(), z_cols.begin(), z_cols.end());

  std::vector<std::vector<double>> kept;
  std::vector<std::size_t> dropped;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::vector<double> vals;
    vals.reserve(all.size());
    bool missing = false;
    for (std::size_t c : all) {
      const auto v = parse_cell(table.rows[r][c], r + 1, table.header[c]);
      if (!v) {
        missing = true;
        break;
      }
      vals.push_back(*v);
    }
    if (missing)
      dropped.push_back(r + 1);
    else
      kept.push_back(std::move(vals));
  }
  if (kept.empty()) throw DataError("no usable rows in '" + path + "'");

  const auto n = static_cast<Index>(kept.size());
  const auto l1 = static_cast<Index>(x_cols.size());
  const auto lw = static_cast<Index>(w_cols.size());
  const auto k1 = static_cast<Index>(z_cols.size());
  const Index offset = manifest.add_intercept ? 1 : 0;
  Vector<double> y(n);
  Matrix<double> x(n, l1);
  Matrix<double> w(n, lw + offset);
  Matrix<double> z(n, k1);
  for (Index i = 0; i < n; ++i) {
    const auto& v = kept[static_cast<std::size_t>(i)];
    std::size_t c = 0;
    y[i] = v[c++];
    for (Index j = 0; j < l1; ++j) x(i, j) = v[c++];
    if (offset) w(i, 0) = 1.0;
    for (Index j = 0; j < lw; ++j) w(i, j + offset) = v[c++];
    for (Index j = 0; j < k1; ++j) z(i, j) = v[c++];
  }
  std::vector<std::string> coef_names = manifest.endogenous;
  if (manifest.add_intercept) coef_names.emplace_back("(intercept)");
  coef_names.insert(coef_names.end(), manifest.controls.begin(), manifest.controls.end());
  try {
    return LoadedData{DesignData<double>(std::move(y), std::move(x), std::move(w), std::move(z)), std::move(dropped),
                      std::move(coef_names)};
  } catch (const DimensionError& e) {
    throw DataError(std::string("dataset does not form a valid design: ") + e.what());
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_dataset(const std::string& path, const DesignData<double>& data, const ColumnManifest& manifest) {
  const Index offset = manifest.add_intercept ? 1 : 0;
  if (static_cast<Index>(manifest.endogenous.size()) != data.l1() ||
      static_cast<Index>(manifest.controls.size()) + offset != data.l2() ||
      static_cast<Index>(manifest.instruments.size()) != data.k1())
    throw ConfigError("manifest does not match the dataset's column counts");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  std::vector<std::string> header{manifest.outcome};
  header.insert(header.end(), manifest.endogenous.begin(), manifest.endogenous.end());
  header.insert(header.end(), manifest.controls.begin(), manifest.controls.end());
  header.insert(header.end(), manifest.instruments.begin(), manifest.instruments.end());
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_field(header[i]);
  out << '\n';
  for (Index i = 0; i < data.n(); ++i) {
    out << format_double(data.y()[i]);
    for (Index j = 0; j < data.l1(); ++j) out << ',' << format_double(data.x_star()(i, j));
    for (Index j = offset; j < data.l2(); ++j) out << ',' << format_double(data.w()(i, j));
    for (Index j = 0; j < data.k1(); ++j) out << ',' << format_double(data.z_star()(i, j));
    out << '\n';
  }
}

void RunConfig::validate() const {
  switch (mode) {
    case Mode::Simulate:
      if (design.empty()) throw ConfigError("simulate needs --design");
      if (rounds < 1) throw ConfigError("--rounds must be at least 1");
      if (keep_estimates && out_path.empty()) throw ConfigError("--keep-estimates needs --out");
      if (bins < 1) throw ConfigError("--bins must be at least 1");
      break;
    case Mode::Estimate:
      if (data_path.empty()) throw ConfigError("estimate needs --data");
      manifest.validate();
      break;
    case Mode::Bias:
      if (data_path.empty() == design.empty()) throw ConfigError("bias needs exactly one of --data or --design");
      if (!data_path.empty()) manifest.validate();
      break;
    case Mode::OracleCheck:
      if (oracle_n > kOracleMaxN)
        throw ConfigError("oracle-check is limited to N <= " + std::to_string(kOracleMaxN));
      if (oracle_l1 < 1 || oracle_k1 < oracle_l1) throw ConfigError("oracle-check needs 1 <= L1 <= K1");
      if (oracle_n < oracle_k1 + 4) throw ConfigError("oracle-check needs N >= K1 + 4");
      if (instances < 1) throw ConfigError("--instances must be at least 1");
      break;
  }
  if (!(ba_threshold >= 0.0 && ba_threshold < 1.0)) throw ConfigError("--ba-threshold must lie in [0, 1)");
}

mc::SimDesign design_from_config(const RunConfig& config) {
  const std::string& d = config.design;
  if (d == "table4-setup1") return mc::SimDesign::many_instruments(1);
  if (d == "table4-setup2") return mc::SimDesign::many_instruments(2);
  if (d == "table5-setup1" || d == "grouphet-setup1") return mc::SimDesign::group_het(1, config.flip_setup);
  if (d == "table5-setup2" || d == "grouphet-setup2") return mc::SimDesign::group_het(2, config.flip_setup);
  if (d == "outlier" || d == "table6") return mc::SimDesign::outlier(config.design_n, config.intercept);
  throw ConfigError("unknown design '" + d +
                    "' (expected table4-setup1, table4-setup2, table5-setup1, table5-setup2 or outlier)");
}

std::string side_path(const std::string& out, const std::string& tag) {
  const auto slash = out.find_last_of('/');
  const auto dot = out.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return out + "." + tag + ".csv";
  return out.substr(0, dot) + "." + tag + ".csv";
}

void write_summary(std::ostream& out, const mc::MonteCarloSummary& summary, OutputFormat format) {
  if (format == OutputFormat::Csv) {
    out << "estimator,bias,variance,mse,failures,successes,mean_se_sq\n";
    for (const auto& r : summary.rows)
      out << csv_field(r.label) << ',' << format_double(r.bias) << ',' << format_double(r.variance) << ','
          << format_double(r.mse) << ',' << r.failures << ',' << r.successes << ',' << format_double(r.mean_se_sq)
          << '\n';
    return;
  }
  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = "simulate";
  j["design"] = summary.design;
  j["rounds"] = summary.rounds;
  j["seed"] = summary.seed;
  j["beta_true"] = summary.beta_true;
  j["mean_r0"] = number_or_null(summary.mean_r0);
  j["rows"] = json::array();
  for (const auto& r : summary.rows) {
    json row;
    row["estimator"] = r.label;
    row["bias"] = number_or_null(r.bias);
    row["variance"] = number_or_null(r.variance);
    row["mse"] = number_or_null(r.mse);
    row["failures"] = r.failures;
    row["successes"] = r.successes;
    row["mean_se_sq"] = number_or_null(r.mean_se_sq);
    if (!r.note.empty()) row["note"] = r.note;
    j["rows"].push_back(std::move(row));
  }
  out << j.dump(2) << '\n';
}

std::vector<SummaryRecord> read_summary(const std::string& path, OutputFormat format) {
  std::vector<SummaryRecord> out;
  auto to_double = [](const std::string& s) {
    if (s == "nan") return kNaN;
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad number '" + s + "' in summary");
    return v;
  };
  if (format == OutputFormat::Csv) {
    const CsvTable t = read_csv_table(path);
    const auto ce = t.column("estimator");
    const auto cb = t.column("bias");
    const auto cv = t.column("variance");
    const auto cm = t.column("mse");
    const auto cf = t.column("failures");
    for (const auto& row : t.rows)
      out.push_back(SummaryRecord{row[ce], to_double(row[cb]), to_double(row[cv]), to_double(row[cm]),
                                  static_cast<std::size_t>(std::stoull(row[cf]))});
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  const json j = json::parse(in);
  if (j.value("schema_version", 0) != kSchemaVersion) throw DataError("unsupported summary schema version");
  auto num = [](const json& v) { return v.is_null() ? kNaN : v.get<double>(); };
  for (const auto& row : j.at("rows"))
    out.push_back(SummaryRecord{row.at("estimator").get<std::string>(), num(row.at("bias")), num(row.at("variance")),
                                num(row.at("mse")), row.at("failures").get<std::size_t>()});
  return out;
}

void write_estimates(std::ostream& out, const mc::MonteCarloSummary& summary) {
  out << "round";
  for (const auto& r : summary.rows) {
    if (!r.estimates) throw StateError("estimates were not kept for '" + r.label + "'");
    out << ',' << csv_field(r.label);
  }
  out << '\n';
  for (std::size_t i = 0; i < summary.rounds; ++i) {
    out << i;
    for (const auto& r : summary.rows) out << ',' << format_double((*r.estimates)[i]);
    out << '\n';
  }
}

void write_density(std::ostream& out, const mc::DensityTable& table) {
  out << "bin_left,bin_right";
  for (const auto& l : table.labels) out << ',' << csv_field(l);
  out << '\n';
  const std::size_t bins = table.edges.size() - 1;
  for (std::size_t b = 0; b < bins; ++b) {
    out << format_double(table.edges[b]) << ',' << format_double(table.edges[b + 1]);
    for (const auto& c : table.counts) out << ',' << c[b];
    out << '\n';
  }
}

int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    if (config.mode != Mode::Simulate) throw ConfigError("cmd_simulate called with a different mode");
    config.validate();
    const mc::SimDesign design = design_from_config(config);
    const std::vector<NamedEstimator> names =
        config.estimators.empty() ? design.default_estimators() : config.estimators;
    mc::RunOptions options;
    options.keep_estimates = config.keep_estimates;
    options.threads = config.threads;
    options.estimate.divisor = config.divisor;
    const mc::MonteCarloSummary summary = mc::run(design, names, config.rounds, config.seed, options);

    {
      OutputTarget target(config.out_path, out);
      write_summary(target.stream(), summary, config.format);
    }
    if (config.keep_estimates) {
      OutputTarget est(side_path(config.out_path, "estimates"), out);
      write_estimates(est.stream(), summary);
      OutputTarget dens(side_path(config.out_path, "density"), out);
      write_density(dens.stream(), mc::density_export(summary, config.bins));
    }
    bool any_ok = false;
    for (const auto& r : summary.rows) {
      if (r.successes > 0) any_ok = true;
      if (r.failures > 0) log << r.label << ": " << r.failures << " of " << summary.rounds << " rounds failed\n";
      if (!r.note.empty()) log << "note: " << r.note << '\n';
    }
    return any_ok ? kExitOk : kExitNumerical;
  });
}

int cmd_estimate(const RunConfig& config, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    if (config.mode != Mode::Estimate) throw ConfigError("cmd_estimate called with a different mode");
    config.validate();
    const LoadedData loaded = load_csv(config.data_path, config.manifest);
    const DesignData<double>& data = loaded.data;
    if (!loaded.dropped_rows.empty())
      log << "dropped " << loaded.dropped_rows.size() << " row(s) with missing values\n";
    const std::vector<NamedEstimator> names = config.estimators.empty() ? all_names() : config.estimators;
    EstimateOptions<double> options;
    options.divisor = config.divisor;

    struct Row {
      std::string label;
      std::string status = "ok";
      std::string mode;
      std::string note;
      std::string message;
      std::vector<double> beta;
      std::vector<double> se;
      double sigma2 = kNaN;
      double cond = kNaN;
      double bias = kNaN;
      LeverageReport<double> lev;
      bool has_lev = false;
    };
    std::vector<Row> rows;
    PreparedCache cache(data);
    const std::size_t ncoef = loaded.coefficient_names.size();
    for (NamedEstimator name : names) {
      Row row;
      row.label = std::string(to_string(name));
      row.beta.assign(ncoef, kNaN);
      row.se.assign(ncoef, kNaN);
      try {
        const auto spec = resolve_named<double>(name, data.n(), data.k(), data.l(), data.l1());
        row.mode = mode_name(spec.input_mode);
        row.note = spec.note;
        const PreparedDesign<double>& prepared = cache.get(spec.input_mode);
        row.lev = leverage_report(prepared.decomp, config.ba_threshold);
        row.has_lev = true;
        row.bias = bias_coefficient(spec.family, prepared.decomp.leverages(), data.n(), prepared.l()).value;
        const EstimateResult<double> r = estimate(spec, prepared, options);
        for (Index j = 0; j < r.beta_hat.size(); ++j) {
          row.beta[static_cast<std::size_t>(j)] = r.beta_hat[j];
          row.se[static_cast<std::size_t>(j)] = r.se[j];
        }
        row.sigma2 = r.sigma2_hat;
        row.cond = r.cond;
      } catch (const Error& e) {
        row.status = "error";
        row.message = e.what();
      }
      rows.push_back(std::move(row));
    }

    OutputTarget target(config.out_path, out);
    std::ostream& os = target.stream();
    if (config.format == OutputFormat::Csv) {
      os << "estimator,status,mode,note";
      for (const auto& c : loaded.coefficient_names) os << ',' << csv_field("coef_" + c);
      for (const auto& c : loaded.coefficient_names) os << ',' << csv_field("se_" + c);
      os << ",sigma2,cond,bias_coefficient,max_leverage,max_leverage_row,ba_flag,message\n";
      for (const auto& r : rows) {
        os << csv_field(r.label) << ',' << r.status << ',' << r.mode << ',' << csv_field(r.note);
        for (double b : r.beta) os << ',' << (std::isnan(b) ? std::string() : format_double(b));
        for (double s : r.se) os << ',' << (std::isnan(s) ? std::string() : format_double(s));
        os << ',' << format_double(r.sigma2) << ',' << format_double(r.cond) << ',' << format_double(r.bias) << ',';
        if (r.has_lev)
          os << format_double(r.lev.max_leverage) << ',' << (r.lev.max_index + 1) << ','
             << (r.lev.ba_flag ? "true" : "false");
        else
          os << ",,";
        os << ',' << csv_field(r.message) << '\n';
      }
    } else {
      json j;
      j["schema_version"] = kSchemaVersion;
      j["command"] = "estimate";
      j["n"] = data.n();
      j["dropped_rows"] = loaded.dropped_rows;
      j["coefficients"] = loaded.coefficient_names;
      j["rows"] = json::array();
      for (const auto& r : rows) {
        json row;
        row["estimator"] = r.label;
        row["status"] = r.status;
        row["mode"] = r.mode;
        row["note"] = r.note;
        json beta = json::object();
        json se = json::object();
        for (std::size_t c = 0; c < ncoef; ++c) {
          if (std::isnan(r.beta[c])) continue;
          beta[loaded.coefficient_names[c]] = r.beta[c];
          se[loaded.coefficient_names[c]] = number_or_null(r.se[c]);
        }
        row["beta"] = beta;
        row["se"] = se;
        row["sigma2"] = number_or_null(r.sigma2);
        row["cond"] = number_or_null(r.cond);
        row["bias_coefficient"] = number_or_null(r.bias);
        if (r.has_lev)
          row["leverage"] = {{"max", r.lev.max_leverage},
                             {"row", r.lev.max_index + 1},
                             {"margin", r.lev.margin},
                             {"ba_flag", r.lev.ba_flag}};
        if (!r.message.empty()) row["message"] = r.message;
        j["rows"].push_back(std::move(row));
      }
      os << j.dump(2) << '\n';
    }
    bool any_ok = false;
    for (const auto& r : rows) {
      if (r.status == "ok") any_ok = true;
      if (!r.note.empty()) log << "note: " << r.note << '\n';
      if (r.status != "ok") log << r.label << ": " << r.message << '\n';
    }
    return any_ok ? kExitOk : kExitNumerical;
  });
}

int cmd_bias(const RunConfig& config, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    if (config.mode != Mode::Bias) throw ConfigError("cmd_bias called with a different mode");
    config.validate();
    std::optional<DesignData<double>> holder;
    if (!config.data_path.empty()) {
      holder.emplace(load_csv(config.data_path, config.manifest).data);
    } else {
      RngStream rng(config.seed, 0);
      holder.emplace(mc::generate(design_from_config(config), rng).data);
    }
    const DesignData<double>& data = *holder;
    const std::vector<NamedEstimator> names = config.estimators.empty() ? all_names() : config.estimators;

    struct Row {
      std::string label;
      std::string mode;
      std::string note;
      BiasCoefficient<double> coef;
      LeverageReport<double> lev;
      std::string message;
    };
    std::vector<Row> rows;
    PreparedCache cache(data);
    bool any_ok = false;
    for (NamedEstimator name : names) {
      Row row;
      row.label = std::string(to_string(name));
      try {
        const auto spec = resolve_named<double>(name, data.n(), data.k(), data.l(), data.l1());
        row.mode = mode_name(spec.input_mode);
        row.note = spec.note;
        const auto& prepared = cache.get(spec.input_mode);
        row.lev = leverage_report(prepared.decomp, config.ba_threshold);
        row.coef = bias_coefficient(spec.family, prepared.decomp.leverages(), data.n(), prepared.l());
        any_ok = true;
      } catch (const Error& e) {
        row.message = e.what();
        row.coef.value = row.coef.trace_c = kNaN;
      }
      rows.push_back(std::move(row));
    }

    OutputTarget target(config.out_path, out);
    std::ostream& os = target.stream();
    if (config.format == OutputFormat::Csv) {
      os << "estimator,mode,note,trace_c,l_effective,coefficient,approximately_unbiased,max_leverage,max_leverage_row,"
            "margin,ba_flag,message\n";
      for (const auto& r : rows) {
        os << csv_field(r.label) << ',' << r.mode << ',' << csv_field(r.note) << ',' << format_double(r.coef.trace_c)
           << ',' << r.coef.l_effective << ',' << format_double(r.coef.value) << ','
           << (r.message.empty() && is_approximately_unbiased(r.coef) ? "true" : "false") << ','
           << format_double(r.lev.max_leverage) << ',' << (r.lev.max_index + 1) << ','
           << format_double(r.lev.margin) << ',' << (r.lev.ba_flag ? "true" : "false") << ','
           << csv_field(r.message) << '\n';
      }
    } else {
      json j;
      j["schema_version"] = kSchemaVersion;
      j["command"] = "bias";
      j["n"] = data.n();
      j["k"] = data.k();
      j["l"] = data.l();
      j["rows"] = json::array();
      for (const auto& r : rows) {
        json row{{"estimator", r.label},
                 {"mode", r.mode},
                 {"note", r.note},
                 {"trace_c", number_or_null(r.coef.trace_c)},
                 {"l_effective", r.coef.l_effective},
                 {"coefficient", number_or_null(r.coef.value)},
                 {"approximately_unbiased", r.message.empty() && is_approximately_unbiased(r.coef)},
                 {"leverage",
                  {{"max", r.lev.max_leverage},
                   {"row", r.lev.max_index + 1},
                   {"margin", r.lev.margin},
                   {"ba_flag", r.lev.ba_flag}}}};
        if (!r.message.empty()) row["message"] = r.message;
        j["rows"].push_back(std::move(row));
      }
      os << j.dump(2) << '\n';
    }
    for (const auto& r : rows)
      if (!r.message.empty()) log << r.label << ": " << r.message << '\n';
    return any_ok ? kExitOk : kExitNumerical;
  });
}

DesignData<double> random_oracle_instance(Index n, Index k1, Index l1, std::uint64_t seed, std::uint64_t index) {
  RngStream rng(seed, index);
  Matrix<double> z(n, k1);
  Matrix<double> w(n, 2);
  Matrix<double> x(n, l1);
  Vector<double> y(n);
  for (Index i = 0; i < n; ++i) {
    w(i, 0) = 1.0;
    w(i, 1) = rng.normal();
    double zsum = 0.0;
    for (Index j = 0; j < k1; ++j) {
      z(i, j) = rng.normal();
      zsum += z(i, j) * (1.0 + 0.25 * static_cast<double>(j));
    }
    const double eps = rng.normal();
    double ysum = 0.2 + 0.5 * w(i, 1) + eps;
    for (Index j = 0; j < l1; ++j) {
      x(i, j) = 0.4 * zsum / static_cast<double>(k1) + 0.3 * w(i, 1) + 0.6 * eps + 0.8 * rng.normal() +
                0.3 * z(i, j % k1);
      ysum += 0.3 * x(i, j);
    }
    y[i] = ysum;
  }
  return DesignData<double>(std::move(y), std::move(x), std::move(w), std::move(z));
}

int cmd_oracle_check(const RunConfig& config, std::ostream& out, std::ostream& log) {
  return guarded(log, [&] {
    if (config.mode != Mode::OracleCheck) throw ConfigError("cmd_oracle_check called with a different mode");
    config.validate();
    struct Row {
      std::size_t instance;
      std::string status;
      double discrepancy;
      std::string message;
    };
    std::vector<Row> rows;
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::size_t i = 0; i < config.instances; ++i) {
      Row row{i, "ok", kNaN, {}};
      try {
        const DesignData<double> d =
            random_oracle_instance(config.oracle_n, config.oracle_k1, config.oracle_l1, config.seed, i);
        const auto spec = resolve_named<double>(NamedEstimator::JIVE1, d.n(), d.k(), d.l(), d.l1());
        const Vector<double> closed = estimate(spec, d).beta_hat;
        const Vector<double> loo = jive1_loo_oracle(d);
        row.discrepancy = (closed - loo).norm() / std::max(loo.norm(), std::numeric_limits<double>::min());
        worst = std::max(worst, row.discrepancy);
        ++compared;
      } catch (const OracleInfeasibleError& e) {
        row.status = "infeasible";
        row.message = e.what();
      } catch (const Error& e) {
        row.status = "error";
        row.message = e.what();
      }
      rows.push_back(std::move(row));
    }
    const bool pass = compared > 0 && worst < kOracleTolerance;

    OutputTarget target(config.out_path, out);
    std::ostream& os = target.stream();
    if (config.format == OutputFormat::Csv) {
      os << "instance,status,discrepancy,message\n";
      for (const auto& r : rows)
        os << r.instance << ',' << r.status << ',' << format_double(r.discrepancy) << ',' << csv_field(r.message)
           << '\n';
    } else {
      json j;
      j["schema_version"] = kSchemaVersion;
      j["command"] = "oracle-check";
      j["n"] = config.oracle_n;
      j["k1"] = config.oracle_k1;
      j["l1"] = config.oracle_l1;
      j["seed"] = config.seed;
      j["compared"] = compared;
      j["max_discrepancy"] = worst;
      j["tolerance"] = kOracleTolerance;
      j["pass"] = pass;
      j["instances"] = json::array();
      for (const auto& r : rows) {
        json row{{"instance", r.instance}, {"status", r.status}, {"discrepancy", number_or_null(r.discrepancy)}};
        if (!r.message.empty()) row["message"] = r.message;
        j["instances"].push_back(std::move(row));
      }
      os << j.dump(2) << '\n';
    }
    log << "max relative discrepancy over " << compared << " instance(s): " << format_double(worst) << '\n';
    return pass ? kExitOk : kExitNumerical;
  });
}

}  // namespace ivc::io
