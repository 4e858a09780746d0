#include <cstring>
#include <fstream>

#include "dtm/common.hpp"
#include "dtm/models.hpp"
#include "json.hpp"

namespace dtm::models {

using nlohmann::json;

namespace {

constexpr char kModelMagic[4] = {'D', 'T', 'M', '1'};
constexpr char kEnsembleMagic[4] = {'D', 'T', 'M', 'E'};

const char* role_name(TermRole r) {
  return r == TermRole::kIntercept ? "intercept" : "shift";
}
const char* complexity_name(TermComplexity c) {
  switch (c) {
    case TermComplexity::kSimple: return "simple";
    case TermComplexity::kLinear: return "linear";
    default: return "complex";
  }
}
const char* input_name(TermInput i) {
  switch (i) {
    case TermInput::kNone: return "none";
    case TermInput::kTabular: return "tabular";
    default: return "image";
  }
}

json spec_to_json(const ModelSpec& spec) {
  json terms = json::array();
  for (const auto& t : spec.terms) {
    terms.push_back({{"name", t.name},
                     {"role", role_name(t.role)},
                     {"complexity", complexity_name(t.complexity)},
                     {"input", input_name(t.input)},
                     {"features", t.features},
                     {"exclude", t.exclude}});
  }
  return {{"name", spec.name},
          {"class_count", spec.class_count},
          {"latent", std::string(latent::name(spec.latent))},
          {"l2", spec.l2},
          {"collapse_class", spec.collapse_class},
          {"cs_feature", spec.cs_feature},
          {"terms", terms}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.class_count = j.at("class_count").get<int>();
  spec.latent = latent::from_name(j.at("latent").get<std::string>());
  spec.l2 = j.at("l2").get<double>();
  spec.collapse_class = j.at("collapse_class").get<int>();
  spec.cs_feature = j.at("cs_feature").get<std::string>();
  for (const auto& tj : j.at("terms")) {
    TermSpec t;
    t.name = tj.at("name").get<std::string>();
    const std::string role = tj.at("role").get<std::string>();
    t.role = role == "intercept" ? TermRole::kIntercept : TermRole::kShift;
    const std::string cx = tj.at("complexity").get<std::string>();
    t.complexity = cx == "simple" ? TermComplexity::kSimple
                   : cx == "linear" ? TermComplexity::kLinear
                                    : TermComplexity::kComplex;
    const std::string in = tj.at("input").get<std::string>();
    t.input = in == "none" ? TermInput::kNone
              : in == "tabular" ? TermInput::kTabular
                                : TermInput::kImage;
    t.features = tj.at("features").get<std::vector<std::string>>();
    t.exclude = tj.at("exclude").get<std::vector<std::string>>();
    spec.terms.push_back(std::move(t));
  }
  return spec;
}

json meta_to_json(const TrainMeta& meta) {
  json history = json::array();
  for (const auto& h : meta.history)
    history.push_back({h.epoch, h.train_nll, h.val_nll});
  return {{"split", meta.split},
          {"seed", meta.seed},
          {"best_epoch", meta.best_epoch},
          {"best_val_nll", meta.best_val_nll},
          {"history", history}};
}

TrainMeta meta_from_json(const json& j) {
  TrainMeta meta;
  meta.split = j.at("split").get<int>();
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.best_epoch = j.at("best_epoch").get<int>();
  meta.best_val_nll = j.at("best_val_nll").get<double>();
  for (const auto& hj : j.at("history"))
    meta.history.push_back({hj.at(0).get<int>(), hj.at(1).get<double>(),
                            hj.at(2).get<double>()});
  return meta;
}

void write_model_blob(std::ostream& out, const FittedModel& fitted) {
  json tensors = json::array();
  for (const auto& [name, t] : fitted.params)
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
  json header = {
      {"format", 1},
      {"spec", spec_to_json(fitted.spec)},
      {"feature_names", fitted.feature_names},
      {"standardizer",
       {{"mean", fitted.standardizer.mean},
        {"sd", fitted.standardizer.sd},
        {"active", fitted.standardizer.active}}},
      {"meta", meta_to_json(fitted.meta)},
      {"volume_extents", fitted.volume_extents},
      {"tensors", tensors}};
  const std::string h = header.dump();
  const std::uint32_t len = static_cast<std::uint32_t>(h.size());
  out.write(kModelMagic, 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : fitted.params)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

FittedModel read_model_blob(std::istream& in, const std::string& what) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0)
    throw DataError(cat(what, ": bad magic, not a DTM1 model"));
  std::uint32_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), 4))
    throw DataError(cat(what, ": truncated header length"));
  std::string h(len, '\0');
  if (!in.read(h.data(), len)) throw DataError(cat(what, ": truncated header"));
  json header;
  try {
    header = json::parse(h);
  } catch (const json::exception& e) {
    throw DataError(cat(what, ": invalid header: ", e.what()));
  }
  FittedModel fitted;
  fitted.spec = spec_from_json(header.at("spec"));
  fitted.feature_names = header.at("feature_names").get<std::vector<std::string>>();
  fitted.standardizer.mean =
      header.at("standardizer").at("mean").get<std::vector<double>>();
  fitted.standardizer.sd =
      header.at("standardizer").at("sd").get<std::vector<double>>();
  fitted.standardizer.active =
      header.at("standardizer").at("active").get<std::vector<std::uint8_t>>();
  fitted.meta = meta_from_json(header.at("meta"));
  auto ext = header.at("volume_extents").get<std::vector<std::size_t>>();
  if (ext.size() == 3) fitted.volume_extents = {ext[0], ext[1], ext[2]};
  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    auto shape = tj.at("shape").get<std::vector<std::size_t>>();
    netcore::Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw DataError(cat(what, ": truncated tensor '", name, "'"));
    fitted.params[name] = std::move(t);
  }
  return fitted;
}

}  // namespace

void save_model(const FittedModel& fitted, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(cat("cannot write '", path.string(), "'"));
  write_model_blob(out, fitted);
  if (!out) throw DataError(cat("failed writing '", path.string(), "'"));
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(cat("cannot open '", path.string(), "'"));
  return read_model_blob(in, path.string());
}

void save_ensemble(const std::vector<FittedModel>& members,
                   const std::filesystem::path& path) {
  if (members.empty()) throw ConfigError("ensemble: no members to save");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(cat("cannot write '", path.string(), "'"));
  const std::uint32_t count = static_cast<std::uint32_t>(members.size());
  out.write(kEnsembleMagic, 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& m : members) write_model_blob(out, m);
  if (!out) throw DataError(cat("failed writing '", path.string(), "'"));
}

std::vector<FittedModel> load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(cat("cannot open '", path.string(), "'"));
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kEnsembleMagic, 4) != 0)
    throw DataError(cat(path.string(), ": bad magic, not a DTME ensemble"));
  std::uint32_t count = 0;
  if (!in.read(reinterpret_cast<char*>(&count), 4) || count == 0)
    throw DataError(cat(path.string(), ": invalid member count"));
  std::vector<FittedModel> members;
  for (std::uint32_t i = 0; i < count; ++i)
    members.push_back(read_model_blob(in, cat(path.string(), "[", i, "]")));
  return members;
}

std::vector<FittedModel> load_any(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(cat("cannot open '", path.string(), "'"));
  char magic[4];
  if (!in.read(magic, 4)) throw DataError(cat(path.string(), ": empty file"));
  in.close();
  if (std::memcmp(magic, kEnsembleMagic, 4) == 0) return load_ensemble(path);
  return {load_model(path)};
}

}  // namespace dtm::models
