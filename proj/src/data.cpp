#include "dtm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dtm/common.hpp"
#include "dtm/rng.hpp"
#include "dtm/trafo.hpp"

namespace dtm::data {

namespace fs = std::filesystem;

const ColumnSpec* TabularSchema::find(const std::string& name) const {
  for (const auto& c : columns)
    if (c.name == name) return &c;
  return nullptr;
}

std::size_t TabularSchema::outcome_index() const {
  std::size_t idx = columns.size();
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].role == ColumnSpec::Role::kOutcome) {
      if (idx != columns.size()) throw ConfigError("schema: multiple outcome columns");
      idx = i;
    }
  if (idx == columns.size()) throw ConfigError("schema: no outcome column");
  return idx;
}

void TabularSchema::validate() const {
  outcome_index();
  std::set<std::string> seen;
  for (const auto& c : columns)
    if (!seen.insert(c.name).second)
      throw ConfigError(cat("schema: duplicate column '", c.name, "'"));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_number(const std::string& s, const std::string& what) {
  if (s.empty())
    throw DataError(cat("missing value in column '", what, "' (no imputation)"));
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(cat("cannot parse '", s, "' in column '", what, "' as a number"));
  }
}

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(cat("cannot open '", path.string(), "'"));
  CsvFile csv;
  std::string line;
  if (!std::getline(in, line)) throw DataError(cat("empty file '", path.string(), "'"));
  csv.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != csv.header.size())
      throw DataError(cat(path.string(), ": row ", csv.rows.size() + 1, " has ",
                          fields.size(), " fields, header has ", csv.header.size()));
    csv.rows.push_back(std::move(fields));
  }
  return csv;
}

}  // namespace

EncodedTable ingest_tabular(const fs::path& path, TabularSchema schema,
                            int class_count) {
  CsvFile csv = read_csv(path);
  schema.validate();

  std::map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < csv.header.size(); ++i) col_of[csv.header[i]] = i;
  for (const auto& c : schema.columns)
    if (!col_of.count(c.name))
      throw DataError(cat(path.string(), ": schema column '", c.name,
                          "' not found in header"));

  // Fix categorical levels at ingestion when not declared.
  for (auto& c : schema.columns) {
    if (c.kind != ColumnSpec::Kind::kCategorical || !c.levels.empty()) continue;
    std::set<std::string> seen;
    for (const auto& row : csv.rows) {
      const std::string& v = row[col_of[c.name]];
      if (v.empty())
        throw DataError(cat("missing value in column '", c.name, "' (no imputation)"));
      seen.insert(v);
    }
    c.levels.assign(seen.begin(), seen.end());
    if (c.levels.size() < 2)
      throw DataError(cat("categorical column '", c.name, "' has fewer than 2 levels"));
  }

  EncodedTable table;
  table.schema = schema;
  table.n = csv.rows.size();

  for (const auto& c : schema.columns) {
    if (c.role != ColumnSpec::Role::kPredictor) continue;
    if (c.kind == ColumnSpec::Kind::kCategorical) {
      for (std::size_t l = 1; l < c.levels.size(); ++l) {
        table.feature_names.push_back(c.name + "_" + c.levels[l]);
        table.standardizable.push_back(0);
      }
    } else {
      table.feature_names.push_back(c.name);
      table.standardizable.push_back(1);
    }
  }
  table.p = table.feature_names.size();
  table.x.resize(table.n * table.p);
  table.y.resize(table.n);
  table.ids.resize(table.n);

  // Outcome values must be consecutive-ish integers; classes are mapped to
  // 1..K with class 1 at the smallest observed value.
  const std::size_t out_idx = schema.outcome_index();
  const std::string& out_name = schema.columns[out_idx].name;
  long y_min = std::numeric_limits<long>::max();
  long y_max = std::numeric_limits<long>::min();
  std::vector<long> raw_y(table.n);
  for (std::size_t i = 0; i < table.n; ++i) {
    const double v = parse_number(csv.rows[i][col_of[out_name]], out_name);
    const long k = std::lround(v);
    if (v != static_cast<double>(k))
      throw DataError(cat("outcome '", csv.rows[i][col_of[out_name]],
                          "' is not an integer class"));
    raw_y[i] = k;
    y_min = std::min(y_min, k);
    y_max = std::max(y_max, k);
  }
  table.outcome_offset = static_cast<int>(y_min);
  table.class_count = class_count > 0 ? class_count
                                      : static_cast<int>(y_max - y_min + 1);
  for (std::size_t i = 0; i < table.n; ++i) {
    const long k = raw_y[i] - y_min + 1;
    if (k < 1 || k > table.class_count)
      throw DataError(cat("outcome value ", raw_y[i], " outside the ",
                          table.class_count, "-class range"));
    table.y[i] = static_cast<int>(k);
  }

  const ColumnSpec* id_col = nullptr;
  for (const auto& c : schema.columns)
    if (c.role == ColumnSpec::Role::kId) id_col = &c;

  for (std::size_t i = 0; i < table.n; ++i) {
    auto encoded = encode_row(schema, csv.header, csv.rows[i]);
    std::copy(encoded.begin(), encoded.end(), table.x.begin() + i * table.p);
    table.ids[i] = id_col ? std::llround(parse_number(
                                csv.rows[i][col_of[id_col->name]], id_col->name))
                          : static_cast<std::int64_t>(i);
  }
  return table;
}

std::vector<double> encode_row(const TabularSchema& schema,
                               const std::vector<std::string>& header,
                               const std::vector<std::string>& fields) {
  std::map<std::string, std::size_t> col_of;
  for (std::size_t i = 0; i < header.size(); ++i) col_of[header[i]] = i;
  std::vector<double> out;
  for (const auto& c : schema.columns) {
    if (c.role != ColumnSpec::Role::kPredictor) continue;
    auto it = col_of.find(c.name);
    if (it == col_of.end())
      throw DataError(cat("column '", c.name, "' missing from row"));
    const std::string& v = fields[it->second];
    if (c.kind == ColumnSpec::Kind::kCategorical) {
      if (v.empty())
        throw DataError(cat("missing value in column '", c.name, "' (no imputation)"));
      const auto lev = std::find(c.levels.begin(), c.levels.end(), v);
      if (lev == c.levels.end())
        throw DataError(cat("unknown level '", v, "' in column '", c.name, "'"));
      const std::size_t li = static_cast<std::size_t>(lev - c.levels.begin());
      for (std::size_t l = 1; l < c.levels.size(); ++l)
        out.push_back(l == li ? 1.0 : 0.0);
    } else {
      out.push_back(parse_number(v, c.name));
    }
  }
  return out;
}

Standardizer Standardizer::fit(const EncodedTable& table,
                               const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw DataError("standardizer: no rows");
  Standardizer s;
  s.mean.assign(table.p, 0.0);
  s.sd.assign(table.p, 1.0);
  s.active.assign(table.standardizable.begin(), table.standardizable.end());
  for (std::size_t j = 0; j < table.p; ++j) {
    if (!s.active[j]) continue;
    double m = 0.0;
    for (std::size_t i : rows) m += table.row(i)[j];
    m /= static_cast<double>(rows.size());
    double ss = 0.0;
    for (std::size_t i : rows) {
      const double d = table.row(i)[j] - m;
      ss += d * d;
    }
    const double sd =
        rows.size() > 1 ? std::sqrt(ss / static_cast<double>(rows.size() - 1)) : 0.0;
    if (sd <= 0.0)
      throw DataError(cat("column '", table.feature_names[j],
                          "' is constant on the training split; exclude it"));
    s.mean[j] = m;
    s.sd[j] = sd;
  }
  return s;
}

Standardizer Standardizer::identity(std::size_t p) {
  Standardizer s;
  s.mean.assign(p, 0.0);
  s.sd.assign(p, 1.0);
  s.active.assign(p, 0);
  return s;
}

void Standardizer::apply_row(const double* in, double* out) const {
  for (std::size_t j = 0; j < mean.size(); ++j)
    out[j] = active[j] ? (in[j] - mean[j]) / sd[j] : in[j];
}

std::vector<double> Standardizer::apply(const std::vector<double>& row) const {
  if (row.size() != mean.size())
    throw ShapeError(cat("standardizer: row has ", row.size(), " columns, expected ",
                         mean.size()));
  std::vector<double> out(row.size());
  apply_row(row.data(), out.data());
  return out;
}

double Standardizer::destandardize(std::size_t col, double value) const {
  return active[col] ? value * sd[col] + mean[col] : value;
}

void VoxelVolume::normalize() {
  if (voxels.empty()) return;
  double m = 0.0;
  for (float v : voxels) m += v;
  m /= static_cast<double>(voxels.size());
  double ss = 0.0;
  for (float v : voxels) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(voxels.size()));
  const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
  for (float& v : voxels) v = static_cast<float>((v - m) * inv);
}

namespace {
constexpr char kVoxMagic[4] = {'V', 'O', 'X', '1'};
constexpr std::uint64_t kVoxMaxBytes = 1ull << 31;
}  // namespace

VoxelVolume read_vox(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(cat("cannot open '", path.string(), "'"));
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kVoxMagic, 4) != 0)
    throw DataError(cat(path.string(), ": bad magic, not a VOX1 file"));
  std::uint32_t ext[3];
  if (!in.read(reinterpret_cast<char*>(ext), 12))
    throw DataError(cat(path.string(), ": truncated header"));
  const std::uint64_t count =
      static_cast<std::uint64_t>(ext[0]) * ext[1] * ext[2];
  if (count * 4 > kVoxMaxBytes)
    throw DataError(cat(path.string(), ": extent overflow (", ext[0], "x", ext[1],
                        "x", ext[2], ")"));
  VoxelVolume v;
  v.extents = {ext[0], ext[1], ext[2]};
  v.voxels.resize(count);
  if (!in.read(reinterpret_cast<char*>(v.voxels.data()),
               static_cast<std::streamsize>(count * 4)))
    throw DataError(cat(path.string(), ": truncated payload"));
  return v;
}

void write_vox(const fs::path& path, const VoxelVolume& volume) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(cat("cannot write '", path.string(), "'"));
  out.write(kVoxMagic, 4);
  out.write(reinterpret_cast<const char*>(volume.extents.data()), 12);
  out.write(reinterpret_cast<const char*>(volume.voxels.data()),
            static_cast<std::streamsize>(volume.voxels.size() * 4));
  if (!out) throw DataError(cat("failed writing '", path.string(), "'"));
}

std::vector<double> thetas_from_freqs(const std::vector<double>& freqs,
                                      latent::Kind kind) {
  if (freqs.size() < 2) throw ConfigError("class frequencies: need at least 2");
  std::vector<double> thetas;
  double cum = 0.0;
  for (std::size_t k = 0; k + 1 < freqs.size(); ++k) {
    cum += freqs[k];
    if (!(cum > 0.0 && cum < 1.0))
      throw ConfigError("class frequencies must be positive and sum to 1");
    thetas.push_back(latent::quantile(kind, cum));
  }
  return thetas;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.class_count < 2) throw ConfigError("synthetic: need K >= 2");
  if (spec.n < 1) throw ConfigError("synthetic: need n >= 1");
  if (!spec.factor_beta.empty() &&
      spec.factor_beta.size() + 1 != static_cast<std::size_t>(spec.factor_levels))
    throw ConfigError("synthetic: factor_beta must have factor_levels-1 entries");

  const std::size_t pc = spec.beta.size();
  const bool volumes = spec.with_volumes || spec.w_img != 0.0;
  const std::size_t fdummies =
      spec.factor_levels > 1 ? static_cast<std::size_t>(spec.factor_levels - 1) : 0;

  std::vector<double> thetas =
      spec.class_freqs.empty()
          ? thetas_from_freqs(
                std::vector<double>(spec.class_count, 1.0 / spec.class_count),
                spec.latent)
          : thetas_from_freqs(spec.class_freqs, spec.latent);
  auto cutpoints = trafo::CutpointVector::from_thetas(thetas);

  Dataset ds;
  EncodedTable& t = ds.table;
  t.n = spec.n;
  t.class_count = spec.class_count;
  t.outcome_offset = 0;

  TabularSchema schema;
  ColumnSpec id;
  id.name = "id";
  id.role = ColumnSpec::Role::kId;
  schema.columns.push_back(id);
  for (std::size_t j = 0; j < pc; ++j) {
    ColumnSpec c;
    c.name = "x" + std::to_string(j + 1);
    schema.columns.push_back(c);
    t.feature_names.push_back(c.name);
    t.standardizable.push_back(1);
  }
  if (fdummies > 0) {
    ColumnSpec c;
    c.name = "f";
    c.kind = ColumnSpec::Kind::kCategorical;
    for (int l = 0; l < spec.factor_levels; ++l)
      c.levels.push_back("l" + std::to_string(l));
    schema.columns.push_back(c);
    for (std::size_t l = 1; l < c.levels.size(); ++l) {
      t.feature_names.push_back("f_" + c.levels[l]);
      t.standardizable.push_back(0);
    }
  }
  ColumnSpec yc;
  yc.name = "y";
  yc.role = ColumnSpec::Role::kOutcome;
  schema.columns.push_back(yc);
  t.schema = schema;

  t.p = t.feature_names.size();
  t.x.resize(t.n * t.p);
  t.y.resize(t.n);
  t.ids.resize(t.n);
  if (volumes) ds.volumes.resize(t.n);
  ds.true_probs.resize(t.n);

  Rng rng(derive_seed(spec.seed, 0x5D47A));
  const std::uint32_t d0 = spec.extents[0], d1 = spec.extents[1], d2 = spec.extents[2];

  // Centered Gaussian bump; its amplitude is the image score s(B).
  std::vector<double> blob;
  if (volumes) {
    blob.resize(static_cast<std::size_t>(d0) * d1 * d2);
    const double c0 = (d0 - 1) / 2.0, c1 = (d1 - 1) / 2.0, c2 = (d2 - 1) / 2.0;
    const double sigma = std::max(1.0, std::min({c0, c1, c2}) / 2.0);
    std::size_t i = 0;
    for (std::uint32_t a = 0; a < d0; ++a)
      for (std::uint32_t b = 0; b < d1; ++b)
        for (std::uint32_t c = 0; c < d2; ++c, ++i) {
          const double r2 = (a - c0) * (a - c0) + (b - c1) * (b - c1) +
                            (c - c2) * (c - c2);
          blob[i] = std::exp(-r2 / (2.0 * sigma * sigma));
        }
  }

  for (std::size_t i = 0; i < t.n; ++i) {
    t.ids[i] = static_cast<std::int64_t>(i + 1);
    double shift = 0.0;
    double* row = t.x.data() + i * t.p;
    for (std::size_t j = 0; j < pc; ++j) {
      row[j] = rng.normal();
      shift += spec.beta[j] * row[j];
    }
    if (fdummies > 0) {
      const std::size_t level = static_cast<std::size_t>(
          rng.below(static_cast<std::uint64_t>(spec.factor_levels)));
      for (std::size_t l = 1; l <= fdummies; ++l)
        row[pc + l - 1] = l == level ? 1.0 : 0.0;
      if (level >= 1 && !spec.factor_beta.empty())
        shift += spec.factor_beta[level - 1];
    }
    if (volumes) {
      const double s = rng.normal();  // image score
      VoxelVolume& v = ds.volumes[i];
      v.extents = spec.extents;
      v.voxels.resize(blob.size());
      // Blob gain 3 keeps the lesion clearly above the unit noise floor.
      for (std::size_t q = 0; q < blob.size(); ++q)
        v.voxels[q] = static_cast<float>(rng.normal() + 3.0 * s * blob[q]);
      v.normalize();
      shift += spec.w_img * s;
    }
    auto probs = trafo::ordinal_class_probs(cutpoints, shift, spec.latent);
    const double u = rng.uniform01();
    double cum = 0.0;
    int cls = spec.class_count;
    for (int k = 0; k < spec.class_count; ++k) {
      cum += probs[k];
      if (u < cum) {
        cls = k + 1;
        break;
      }
    }
    t.y[i] = cls;
    ds.true_probs[i] = std::move(probs);
  }
  return ds;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  const EncodedTable& t = dataset.table;

  // Raw tabular file: ids, predictors (categoricals as level strings), outcome.
  std::ofstream tab(dir / "tabular.csv");
  if (!tab) throw DataError(cat("cannot write '", (dir / "tabular.csv").string(), "'"));
  std::vector<std::string> cols;
  for (const auto& c : t.schema.columns) cols.push_back(c.name);
  for (std::size_t i = 0; i < cols.size(); ++i)
    tab << (i ? "," : "") << cols[i];
  tab << "\n";
  for (std::size_t i = 0; i < t.n; ++i) {
    std::size_t enc = 0;
    bool first = true;
    for (const auto& c : t.schema.columns) {
      if (!first) tab << ",";
      first = false;
      if (c.role == ColumnSpec::Role::kId) {
        tab << t.ids[i];
      } else if (c.role == ColumnSpec::Role::kOutcome) {
        tab << (t.y[i] - 1 + t.outcome_offset);
      } else if (c.kind == ColumnSpec::Kind::kCategorical) {
        std::size_t level = 0;
        for (std::size_t l = 1; l < c.levels.size(); ++l)
          if (t.row(i)[enc + l - 1] == 1.0) level = l;
        tab << c.levels[level];
        enc += c.levels.size() - 1;
      } else {
        tab << format_double(t.row(i)[enc]);
        enc += 1;
      }
    }
    tab << "\n";
  }
  tab.close();

  if (dataset.has_volumes()) fs::create_directories(dir / "volumes");
  std::ofstream man(dir / "manifest.csv");
  man << "id,tabular_file,tabular_row,volume_file\n";
  for (std::size_t i = 0; i < t.n; ++i) {
    std::string vol;
    if (dataset.has_volumes()) {
      char name[32];
      std::snprintf(name, sizeof(name), "volumes/v%05zu.vox", i);
      vol = name;
      write_vox(dir / vol, dataset.volumes[i]);
    }
    man << t.ids[i] << ",tabular.csv," << i << "," << vol << "\n";
  }
  man.close();

  if (!dataset.true_probs.empty()) {
    std::ofstream tp(dir / "true_probs.csv");
    tp << "id";
    for (int k = 1; k <= t.class_count; ++k) tp << ",p" << k;
    tp << "\n";
    for (std::size_t i = 0; i < t.n; ++i) {
      tp << t.ids[i];
      for (double p : dataset.true_probs[i]) tp << "," << format_double(p);
      tp << "\n";
    }
  }
}

Dataset load_dataset(const DatasetConfig& config) {
  CsvFile man = read_csv(config.manifest);
  const std::vector<std::string> expect{"id", "tabular_file", "tabular_row",
                                        "volume_file"};
  if (man.header != expect)
    throw DataError(cat(config.manifest.string(),
                        ": manifest header must be id,tabular_file,tabular_row,"
                        "volume_file"));
  if (man.rows.empty()) throw DataError("manifest lists no observations");

  const fs::path base = config.manifest.parent_path();
  const std::string tabular_file = man.rows.front()[1];
  for (const auto& r : man.rows)
    if (r[1] != tabular_file)
      throw DataError("manifest references multiple tabular files");

  CsvFile tab = read_csv(base / tabular_file);

  TabularSchema schema;
  for (const auto& name : tab.header) {
    if (std::find(config.drop.begin(), config.drop.end(), name) != config.drop.end())
      continue;
    ColumnSpec c;
    c.name = name;
    if (name == config.outcome) {
      c.role = ColumnSpec::Role::kOutcome;
    } else if (!config.id.empty() && name == config.id) {
      c.role = ColumnSpec::Role::kId;
    }
    for (const auto& [col, levels] : config.categorical)
      if (col == name) {
        c.kind = ColumnSpec::Kind::kCategorical;
        c.levels = levels;
      }
    schema.columns.push_back(c);
  }

  Dataset ds;
  ds.table = ingest_tabular(base / tabular_file, schema, config.class_count);

  // Reorder/select rows according to the manifest.
  const std::size_t n = man.rows.size();
  EncodedTable sel;
  sel.n = n;
  sel.p = ds.table.p;
  sel.feature_names = ds.table.feature_names;
  sel.standardizable = ds.table.standardizable;
  sel.schema = ds.table.schema;
  sel.class_count = ds.table.class_count;
  sel.outcome_offset = ds.table.outcome_offset;
  sel.x.resize(n * sel.p);
  sel.y.resize(n);
  sel.ids.resize(n);
  bool any_volume = false;
  for (const auto& r : man.rows)
    if (!r[3].empty()) any_volume = true;
  if (any_volume) ds.volumes.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = man.rows[i];
    const std::size_t src =
        static_cast<std::size_t>(parse_number(r[2], "tabular_row"));
    if (src >= ds.table.n)
      throw DataError(cat("manifest row ", i, ": tabular_row ", src,
                          " out of range"));
    std::copy(ds.table.row(src), ds.table.row(src) + sel.p,
              sel.x.begin() + i * sel.p);
    sel.y[i] = ds.table.y[src];
    sel.ids[i] = std::llround(parse_number(r[0], "id"));
    if (any_volume) {
      if (r[3].empty())
        throw DataError(cat("manifest row ", i, ": volume missing while other "
                            "rows have one"));
      ds.volumes.push_back(read_vox(base / r[3]));
    }
  }
  ds.table = std::move(sel);
  return ds;
}

}  // namespace dtm::data
