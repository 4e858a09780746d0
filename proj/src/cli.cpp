#include "dtm/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "dtm/common.hpp"
#include "dtm/trafo.hpp"
#include "json.hpp"

namespace dtm::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(cat("config: '", where, "' must be an object"));
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError(cat("config: unknown key '", where, ".", key, "'"));
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_opt(const std::optional<double>& v) {
  return v ? format_double(*v) : "NA";
}

}  // namespace

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(cat("cannot open config '", path.string(), "'"));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(cat("config '", path.string(), "': ", e.what()));
  }

  RunConfig cfg;
  cfg.config_dir = path.parent_path();
  check_keys(j, "", {"seed", "workers", "out", "dataset", "model", "train", "splits",
                     "ensemble", "generate", "evaluate", "subsample", "effect_curve"});

  cfg.seed = j.value("seed", std::uint64_t{1});
  cfg.workers = j.value("workers", 0u);
  if (j.contains("out"))
    cfg.out = resolve(cfg.config_dir, j.at("out").get<std::string>());

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset",
               {"manifest", "outcome", "id", "categorical", "drop", "class_count"});
    cfg.dataset.manifest = resolve(cfg.config_dir, d.at("manifest").get<std::string>());
    cfg.dataset.outcome = d.value("outcome", std::string("y"));
    cfg.dataset.id = d.value("id", std::string(""));
    if (d.contains("categorical"))
      for (const auto& [col, levels] : d.at("categorical").items())
        cfg.dataset.categorical.push_back(
            {col, levels.get<std::vector<std::string>>()});
    if (d.contains("drop"))
      cfg.dataset.drop = d.at("drop").get<std::vector<std::string>>();
    cfg.dataset.class_count = d.value("class_count", 0);
    cfg.has_dataset = true;
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model",
               {"name", "latent", "class_count", "cs_feature", "ls_features",
                "baseline_features", "l2", "collapse_class"});
    cfg.model_name = m.value("name", std::string(""));
    cfg.model_options.latent =
        latent::from_name(m.value("latent", std::string("logistic")));
    cfg.model_options.class_count = m.value("class_count", 7);
    cfg.model_options.cs_feature = m.value("cs_feature", std::string("age"));
    if (m.contains("ls_features"))
      cfg.model_options.ls_features =
          m.at("ls_features").get<std::vector<std::string>>();
    if (m.contains("baseline_features"))
      cfg.model_options.baseline_features =
          m.at("baseline_features").get<std::vector<std::string>>();
    cfg.model_options.l2 = m.value("l2", 1e-3);
    cfg.model_options.collapse_class = m.value("collapse_class", 3);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"learning_rate", "batch_size", "max_epochs", "patience", "augment"});
    cfg.train.learning_rate = t.value("learning_rate", 5e-5);
    cfg.train.batch_size = t.value("batch_size", std::size_t{6});
    cfg.train.max_epochs = t.value("max_epochs", 200);
    cfg.train.patience = t.value("patience", 20);
    cfg.train.augment = t.value("augment", true);
    cfg.train.validate();
  }

  if (j.contains("splits")) {
    const json& s = j.at("splits");
    check_keys(s, "splits", {"count", "fractions"});
    cfg.splits.count = s.value("count", 6);
    if (s.contains("fractions")) {
      auto f = s.at("fractions").get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("config: splits.fractions needs 3 entries");
      cfg.splits.fractions = {f[0], f[1], f[2]};
    }
  }

  if (j.contains("ensemble")) {
    const json& e = j.at("ensemble");
    check_keys(e, "ensemble", {"members", "warm_start"});
    cfg.ensemble_members = e.value("members", std::size_t{5});
    cfg.warm_start = e.value("warm_start", true);
    if (cfg.ensemble_members < 1)
      throw ConfigError("config: ensemble.members must be >= 1");
  }

  if (j.contains("generate")) {
    const json& g = j.at("generate");
    check_keys(g, "generate",
               {"n", "class_count", "beta", "class_freqs", "latent", "w_img",
                "volumes", "extents", "factor_levels", "factor_beta", "seed"});
    cfg.generate.n = g.value("n", std::size_t{400});
    cfg.generate.class_count = g.value("class_count", 7);
    if (g.contains("beta")) cfg.generate.beta = g.at("beta").get<std::vector<double>>();
    if (g.contains("class_freqs"))
      cfg.generate.class_freqs = g.at("class_freqs").get<std::vector<double>>();
    cfg.generate.latent = latent::from_name(g.value("latent", std::string("logistic")));
    cfg.generate.w_img = g.value("w_img", 0.0);
    cfg.generate.with_volumes = g.value("volumes", false);
    if (g.contains("extents")) {
      auto e = g.at("extents").get<std::vector<std::uint32_t>>();
      if (e.size() != 3) throw ConfigError("config: generate.extents needs 3 entries");
      cfg.generate.extents = {e[0], e[1], e[2]};
    }
    cfg.generate.factor_levels = g.value("factor_levels", 0);
    if (g.contains("factor_beta"))
      cfg.generate.factor_beta = g.at("factor_beta").get<std::vector<double>>();
    cfg.generate.seed = g.value("seed", cfg.seed);
    cfg.has_generate = true;
  }

  if (j.contains("evaluate")) {
    const json& e = j.at("evaluate");
    check_keys(e, "evaluate", {"models", "benchmark"});
    if (e.contains("models"))
      for (const auto& p : e.at("models"))
        cfg.evaluate_models.push_back(resolve(cfg.config_dir, p.get<std::string>()));
    cfg.benchmark = e.value("benchmark", std::string(""));
  }

  if (j.contains("subsample")) {
    const json& s = j.at("subsample");
    check_keys(s, "subsample", {"model_a", "model_b", "sizes", "repeats"});
    cfg.subsample_model_a = s.value("model_a", std::string("SI-LS_x"));
    cfg.subsample_model_b = s.value("model_b", std::string("SI"));
    if (s.contains("sizes"))
      cfg.subsample_sizes = s.at("sizes").get<std::vector<std::size_t>>();
    cfg.subsample_repeats = s.value("repeats", 30);
  }

  if (j.contains("effect_curve")) {
    const json& e = j.at("effect_curve");
    check_keys(e, "effect_curve",
               {"model", "feature", "grid_min", "grid_max", "grid_points",
                "bootstrap", "linear_model"});
    if (e.contains("model"))
      cfg.curve_model = resolve(cfg.config_dir, e.at("model").get<std::string>());
    cfg.curve_feature = e.value("feature", std::string("age"));
    cfg.curve_min = e.value("grid_min", -2.0);
    cfg.curve_max = e.value("grid_max", 2.0);
    cfg.curve_points = e.value("grid_points", std::size_t{41});
    cfg.curve_bootstrap = e.value("bootstrap", std::size_t{0});
    if (e.contains("linear_model"))
      cfg.curve_linear_model =
          resolve(cfg.config_dir, e.at("linear_model").get<std::string>());
  }
  return cfg;
}

unsigned resolve_workers(const RunConfig& cfg) {
  if (cfg.workers > 0) return cfg.workers;
  if (const char* env = std::getenv("DTM_WORKERS")) {
    const long w = std::strtol(env, nullptr, 10);
    if (w > 0) return static_cast<unsigned>(w);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

void parallel_tasks(std::size_t count, unsigned workers,
                    const std::function<void(std::size_t)>& fn) {
  if (count == 0) return;
  workers = std::max(1u, std::min<unsigned>(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::vector<std::pair<std::size_t, std::exception_ptr>> errors;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          errors.push_back({i, std::current_exception()});
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::rethrow_exception(errors.front().second);
  }
}

models::ModelSpec spec_from_config(const RunConfig& cfg, const std::string& name) {
  return models::ModelSpec::preset(name, cfg.model_options);
}

std::uint64_t model_train_seed(std::uint64_t master, const std::string& model,
                               int split, int member) {
  // FNV-1a over the model name keeps seeds stable across platforms.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : model) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return derive_seed(master, h, static_cast<std::uint64_t>(split + 1),
                     static_cast<std::uint64_t>(member + 1));
}

std::string sanitize_filename(const std::string& name) {
  std::string out;
  for (char c : name) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
        c == '-' || c == '_')
      out.push_back(c);
    else
      out.push_back('_');
  }
  return out;
}

namespace {

data::Dataset load_configured_dataset(const RunConfig& cfg) {
  if (!cfg.has_dataset) throw ConfigError("config: missing 'dataset' section");
  if (!fs::exists(cfg.dataset.manifest))
    throw ConfigError(cat("config: manifest '", cfg.dataset.manifest.string(),
                          "' does not exist"));
  return data::load_dataset(cfg.dataset);
}

train::TrainConfig train_config_for(const RunConfig& cfg, const std::string& model,
                                    int split, int member) {
  train::TrainConfig tc = cfg.train;
  tc.seed = model_train_seed(cfg.seed, model, split, member);
  return tc;
}

void write_history(const fs::path& path, const models::FittedModel& fm) {
  std::ofstream out(path);
  out << "epoch,train_nll,val_nll\n";
  for (const auto& h : fm.meta.history)
    out << h.epoch << "," << format_double(h.train_nll) << ","
        << format_double(h.val_nll) << "\n";
}

}  // namespace

std::vector<SplitFit> fit_model_over_splits(
    const RunConfig& cfg, const data::Dataset& ds,
    const std::vector<train::SplitIndices>& splits, const std::string& name,
    std::vector<models::FittedModel>* references) {
  const models::ModelSpec spec = spec_from_config(cfg, name);
  const bool ensembled = spec.uses_images() && cfg.ensemble_members > 1;
  const unsigned workers = resolve_workers(cfg);

  const bool needs_reference =
      ensembled && cfg.warm_start &&
      (spec.linear_shift() != nullptr ||
       spec.intercept().complexity == models::TermComplexity::kSimple);
  if (needs_reference && references && references->empty()) {
    references->resize(splits.size());
    parallel_tasks(splits.size(), workers, [&](std::size_t s) {
      (*references)[s] = train::fit(
          spec_from_config(cfg, "SI-LS_x"), ds, splits[s],
          train_config_for(cfg, "SI-LS_x", static_cast<int>(s), 0), nullptr,
          static_cast<int>(s));
    });
  }

  std::vector<SplitFit> fits(splits.size());
  for (std::size_t s = 0; s < splits.size(); ++s) {
    fits[s].split = static_cast<int>(s);
    fits[s].members.resize(ensembled ? cfg.ensemble_members : 1);
  }

  if (!ensembled) {
    parallel_tasks(splits.size(), workers, [&](std::size_t s) {
      fits[s].members[0] =
          train::fit(spec, ds, splits[s],
                     train_config_for(cfg, name, static_cast<int>(s), 0), nullptr,
                     static_cast<int>(s));
    });
    return fits;
  }

  const std::size_t runs = splits.size() * cfg.ensemble_members;
  parallel_tasks(runs, workers, [&](std::size_t r) {
    const std::size_t s = r / cfg.ensemble_members;
    const std::size_t m = r % cfg.ensemble_members;
    netcore::GradientMap init;
    const netcore::GradientMap* initp = nullptr;
    if (needs_reference && references) {
      init = ensemble::warm_start(spec, ds.table.feature_names, (*references)[s]);
      if (!init.empty()) initp = &init;
    }
    fits[s].members[m] = train::fit(
        spec, ds, splits[s],
        train_config_for(cfg, name, static_cast<int>(s), static_cast<int>(m)),
        initp, static_cast<int>(s));
  });
  return fits;
}

std::vector<evaluate::PredictionRecord> test_records(
    const data::Dataset& ds, const std::vector<train::SplitIndices>& splits,
    const std::vector<SplitFit>& fits) {
  std::vector<evaluate::PredictionRecord> records;
  for (const auto& sf : fits) {
    const auto& rows = splits.at(sf.split).test;
    std::vector<std::vector<double>> probs;
    if (sf.members.size() == 1) {
      probs = models::predict_probs(sf.members[0], ds, rows);
    } else {
      ensemble::TransformationEnsemble ens(sf.members);
      probs = ensemble::ensemble_predict_rows(ens, ds, rows);
    }
    const int model_classes = sf.members[0].spec.class_count;
    const int collapse = sf.members[0].spec.collapse_class;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      evaluate::PredictionRecord r;
      r.split = sf.split;
      r.id = ds.table.ids[rows[i]];
      const int k = ds.table.y[rows[i]];
      r.true_class = model_classes == ds.table.class_count
                         ? k
                         : (k <= collapse ? 1 : 2);
      r.probs = probs[i];
      records.push_back(std::move(r));
    }
  }
  return records;
}

std::vector<ProtocolResult> run_protocol(const RunConfig& cfg,
                                         const data::Dataset& ds,
                                         const std::vector<std::string>& names) {
  train::SplitPlan plan = cfg.splits;
  plan.master_seed = derive_seed(cfg.seed, 0x5915);
  const auto splits = train::make_splits(ds.size(), plan);

  std::vector<models::FittedModel> references;
  std::vector<ProtocolResult> results;
  for (const auto& name : names) {
    ProtocolResult r;
    r.model = name;
    r.fits = fit_model_over_splits(cfg, ds, splits, name, &references);
    r.records = test_records(ds, splits, r.fits);
    auto metric = evaluate::mean_nll_metric();
    std::map<int, evaluate::RecordView> by_split;
    for (const auto& rec : r.records) by_split[rec.split].push_back(&rec);
    double total = 0.0;
    for (const auto& [sid, view] : by_split) {
      const double nll = metric(view).value();
      r.per_split_nll.push_back(nll);
      total += nll;
    }
    r.mean_test_nll = total / static_cast<double>(by_split.size());
    results.push_back(std::move(r));
  }
  return results;
}

namespace {

void write_metric_rows(std::ofstream& out, const std::string& model,
                       const evaluate::MetricResult& res) {
  for (std::size_t s = 0; s < res.splits.size(); ++s)
    out << model << "," << res.metric << "," << res.splits[s] << ","
        << format_opt(res.per_split[s]) << "\n";
}

void write_summary_row(std::ofstream& out, const std::string& model,
                       const evaluate::MetricResult& res) {
  out << model << "," << res.metric << "," << format_opt(res.pooled) << ","
      << format_opt(res.lo) << "," << format_opt(res.med) << ","
      << format_opt(res.hi) << "\n";
}

void write_calibration(std::ofstream& out, const std::string& model,
                       const evaluate::CalibrationTable& table) {
  auto emit = [&](const std::string& split, const evaluate::CalibrationCurve& c) {
    for (std::size_t b = 0; b < c.bins.size(); ++b)
      out << model << "," << split << "," << b << ","
          << format_double(c.bins[b].mean_predicted) << ","
          << format_double(c.bins[b].observed) << "," << c.bins[b].count << ","
          << c.note << "\n";
  };
  for (std::size_t s = 0; s < table.per_split.size(); ++s)
    emit(std::to_string(table.splits[s]), table.per_split[s]);
  emit("pooled", table.pooled);
}

}  // namespace

void write_reports(const RunConfig& cfg, const std::vector<ProtocolResult>& results,
                   const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const std::uint64_t eval_seed = derive_seed(cfg.seed, 0xEA1);

  std::ofstream metrics_ord(out_dir / "metrics_ordinal.csv");
  std::ofstream summary_ord(out_dir / "summary_ordinal.csv");
  std::ofstream metrics_bin(out_dir / "metrics_binary.csv");
  std::ofstream summary_bin(out_dir / "summary_binary.csv");
  std::ofstream calib_bin(out_dir / "calibration_binary.csv");
  std::ofstream calib_ord(out_dir / "calibration_ordinal.csv");
  std::ofstream coefs(out_dir / "coefficients.csv");
  metrics_ord << "model,metric,split,value\n";
  summary_ord << "model,metric,pooled,lo,med,hi\n";
  metrics_bin << "model,metric,split,value\n";
  summary_bin << "model,metric,pooled,lo,med,hi\n";
  calib_bin << "model,split,bin,mean_predicted,observed,count,note\n";
  calib_ord << "model,split,bin,mean_predicted,observed,count,note\n";
  coefs << "model,feature,estimate,lo,med,hi\n";
  json summary;

  const ProtocolResult* benchmark = nullptr;
  for (const auto& r : results)
    if (r.model == cfg.benchmark) benchmark = &r;

  for (const auto& r : results) {
    const int K = r.fits[0].members[0].spec.class_count;
    const int collapse = r.fits[0].members[0].spec.collapse_class;
    const bool ordinal = K > 2;
    json model_summary;

    std::vector<std::pair<std::string, evaluate::SplitMetric>> metric_set;
    if (ordinal) {
      metric_set = {{"nll", evaluate::mean_nll_metric()},
                    {"rps", evaluate::mean_rps_metric()},
                    {"qwk", evaluate::qwk_metric()},
                    {"acc_ordinal", evaluate::argmax_accuracy_metric()}};
      for (const auto& [mname, metric] : metric_set) {
        auto res = evaluate::bootstrap_metric(mname, r.records, metric, 1000,
                                              eval_seed);
        write_metric_rows(metrics_ord, r.model, res);
        write_summary_row(summary_ord, r.model, res);
        model_summary["ordinal"][mname] = {{"pooled", format_opt(res.pooled)},
                                           {"lo", format_opt(res.lo)},
                                           {"med", format_opt(res.med)},
                                           {"hi", format_opt(res.hi)}};
        if (benchmark && benchmark != &r) {
          auto rel = evaluate::relative_to_benchmark(
              mname, r.records, benchmark->records, metric, 1000, eval_seed);
          write_metric_rows(metrics_ord, r.model + "-rel", rel);
          write_summary_row(summary_ord, r.model + "-rel", rel);
        }
      }
      write_calibration(calib_ord, r.model, evaluate::calibration_ordinal(r.records));
    }

    // Binary view: ordinal models are collapsed at the configured boundary;
    // binary models evaluate directly.
    std::vector<evaluate::PredictionRecord> brecords;
    for (const auto& rec : r.records) {
      evaluate::PredictionRecord b = rec;
      if (ordinal) {
        auto [fav, unfav] = trafo::collapse_to_binary(rec.probs, collapse);
        b.probs = {fav, unfav};
        b.true_class = rec.true_class <= collapse ? 1 : 2;
      }
      brecords.push_back(std::move(b));
    }
    std::vector<std::pair<std::string, evaluate::SplitMetric>> bin_set{
        {"nll_binary", evaluate::mean_nll_metric()},
        {"brier", evaluate::mean_brier_metric(1)},
        {"auc", evaluate::auc_metric(1)},
        {"acc_binary", evaluate::binary_accuracy_metric(1)}};
    for (const auto& [mname, metric] : bin_set) {
      auto res = evaluate::bootstrap_metric(mname, brecords, metric, 1000, eval_seed);
      write_metric_rows(metrics_bin, r.model, res);
      write_summary_row(summary_bin, r.model, res);
      model_summary["binary"][mname] = {{"pooled", format_opt(res.pooled)},
                                        {"lo", format_opt(res.lo)},
                                        {"med", format_opt(res.med)},
                                        {"hi", format_opt(res.hi)}};
    }
    write_calibration(calib_bin, r.model, evaluate::calibration_binary(brecords, 1));

    // Pooled coefficients across members and splits (Fig. 5 recipe).
    if (r.fits[0].members[0].spec.linear_shift()) {
      std::vector<std::vector<double>> pool;
      std::vector<std::string> names;
      for (const auto& sf : r.fits)
        for (const auto& member : sf.members) {
          auto c = models::shift_coefficients(member);
          names = c.names;
          pool.push_back(c.values);
        }
      auto pooled = evaluate::pool_coefficients(names, pool, 1000, eval_seed);
      for (std::size_t f = 0; f < pooled.names.size(); ++f) {
        coefs << r.model << "," << pooled.names[f] << ","
              << format_double(pooled.estimate[f]) << ","
              << format_double(pooled.lo[f]) << "," << format_double(pooled.med[f])
              << "," << format_double(pooled.hi[f]) << "\n";
        model_summary["coefficients"][pooled.names[f]] = {
            {"estimate", pooled.estimate[f]},
            {"lo", pooled.lo[f]},
            {"hi", pooled.hi[f]}};
      }
    }
    summary[r.model] = std::move(model_summary);
  }

  std::ofstream sj(out_dir / "summary.json");
  sj << summary.dump(2) << "\n";
}

void cmd_simulate(const RunConfig& cfg) {
  if (!cfg.has_generate) throw ConfigError("config: missing 'generate' section");
  data::Dataset ds = data::generate_synthetic(cfg.generate);
  const fs::path dir = cfg.out / "data";
  data::write_dataset(ds, dir);

  // A ready-to-use dataset section for follow-up commands.
  json dcfg{{"manifest", (dir / "manifest.csv").string()},
            {"outcome", "y"},
            {"id", "id"},
            {"class_count", cfg.generate.class_count}};
  if (cfg.generate.factor_levels > 1)
    dcfg["categorical"] = {{"f", json::array()}};
  std::ofstream out(cfg.out / "dataset.json");
  out << json{{"dataset", dcfg}}.dump(2) << "\n";
}

void cmd_fit(const RunConfig& cfg) {
  if (cfg.model_name.empty()) throw ConfigError("config: model.name is required");
  data::Dataset ds = load_configured_dataset(cfg);
  train::SplitPlan plan = cfg.splits;
  plan.master_seed = derive_seed(cfg.seed, 0x5915);
  const auto splits = train::make_splits(ds.size(), plan);

  std::vector<models::FittedModel> references;
  auto fits = fit_model_over_splits(cfg, ds, splits, cfg.model_name, &references);

  const fs::path mdir = cfg.out / "models";
  const fs::path hdir = cfg.out / "history";
  fs::create_directories(mdir);
  fs::create_directories(hdir);
  const std::string base = sanitize_filename(cfg.model_name);
  for (const auto& sf : fits) {
    const std::string stem = base + "_split" + std::to_string(sf.split);
    if (sf.members.size() == 1) {
      models::save_model(sf.members[0], mdir / (stem + ".dtm"));
      write_history(hdir / (stem + ".csv"), sf.members[0]);
    } else {
      models::save_ensemble(sf.members, mdir / (stem + ".dtme"));
      for (std::size_t m = 0; m < sf.members.size(); ++m)
        write_history(hdir / (stem + "_m" + std::to_string(m) + ".csv"),
                      sf.members[m]);
    }
  }
  for (std::size_t s = 0; s < references.size(); ++s) {
    const std::string stem = "reference_SI-LS_x_split" + std::to_string(s);
    models::save_model(references[s], mdir / (stem + ".dtm"));
    write_history(hdir / (stem + ".csv"), references[s]);
  }
}

void cmd_ensemble(const RunConfig& cfg) {
  if (cfg.model_name.empty()) throw ConfigError("config: model.name is required");
  const models::ModelSpec spec = spec_from_config(cfg, cfg.model_name);
  if (!spec.uses_images())
    throw ConfigError(cat("model '", cfg.model_name,
                          "' has no image term; ensembling follows the protocol "
                          "for image models only. Use 'fit'."));
  if (cfg.ensemble_members < 2)
    throw ConfigError("config: ensemble.members must be >= 2 for 'ensemble'");
  cmd_fit(cfg);
}

void cmd_evaluate(const RunConfig& cfg) {
  if (cfg.evaluate_models.empty())
    throw ConfigError("config: evaluate.models is required");
  data::Dataset ds = load_configured_dataset(cfg);
  train::SplitPlan plan = cfg.splits;
  plan.master_seed = derive_seed(cfg.seed, 0x5915);
  const auto splits = train::make_splits(ds.size(), plan);

  std::vector<ProtocolResult> results;
  std::map<std::string, std::vector<SplitFit>> grouped;
  for (const auto& path : cfg.evaluate_models) {
    if (!fs::exists(path))
      throw ConfigError(cat("evaluate: model file '", path.string(),
                            "' does not exist"));
    auto members = models::load_any(path);
    SplitFit sf;
    sf.split = members[0].meta.split;
    if (sf.split < 0 || sf.split >= static_cast<int>(splits.size()))
      throw ConfigError(cat("evaluate: model '", path.string(), "' was fitted on "
                            "split ", sf.split, " which this config lacks"));
    sf.members = std::move(members);
    grouped[sf.members[0].spec.name].push_back(std::move(sf));
  }
  for (auto& [name, fits] : grouped) {
    std::sort(fits.begin(), fits.end(),
              [](const SplitFit& a, const SplitFit& b) { return a.split < b.split; });
    ProtocolResult r;
    r.model = name;
    r.fits = std::move(fits);
    r.records = test_records(ds, splits, r.fits);
    results.push_back(std::move(r));
  }
  write_reports(cfg, results, cfg.out);
}

void cmd_subsample(const RunConfig& cfg) {
  data::Dataset ds = load_configured_dataset(cfg);
  const std::size_t n = ds.size();

  std::vector<std::size_t> sizes = cfg.subsample_sizes;
  if (sizes.empty()) {
    // Seven geometric steps from n/8 up to n.
    for (int i = 6; i >= 0; --i)
      sizes.push_back(static_cast<std::size_t>(
          std::lround(static_cast<double>(n) * std::pow(0.5, i / 2.0))));
  }
  if (sizes.size() != 7)
    throw ConfigError("config: subsample.sizes must list exactly 7 sizes");
  for (std::size_t s : sizes)
    if (s < 13 || s > n)
      throw ConfigError(cat("subsample: size ", s, " outside the feasible range "
                            "13..", n));

  const int repeats = cfg.subsample_repeats;
  struct Row {
    std::size_t size;
    int rep;
    double nll_a, nll_b;
  };
  std::vector<Row> rows(sizes.size() * static_cast<std::size_t>(repeats));
  const unsigned workers = resolve_workers(cfg);

  parallel_tasks(rows.size(), workers, [&](std::size_t t) {
    const std::size_t si = t / static_cast<std::size_t>(repeats);
    const int rep = static_cast<int>(t % static_cast<std::size_t>(repeats));
    const std::size_t size = sizes[si];

    // Draw the subsample, then an 8:1:1 split of it.
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    Rng rng(derive_seed(cfg.seed, 0x5AB5, si, static_cast<std::uint64_t>(rep)));
    rng.shuffle(all);
    all.resize(size);
    train::SplitPlan plan;
    plan.count = 1;
    plan.master_seed = derive_seed(cfg.seed, 0x5B17, si,
                                   static_cast<std::uint64_t>(rep));
    auto sub_split = train::make_splits(size, plan)[0];
    train::SplitIndices split;
    for (std::size_t i : sub_split.train) split.train.push_back(all[i]);
    for (std::size_t i : sub_split.val) split.val.push_back(all[i]);
    for (std::size_t i : sub_split.test) split.test.push_back(all[i]);

    // Seeds depend on the model name only, so a pair of identical names
    // yields identical fits (NLLR exactly zero).
    auto eval_model = [&](const std::string& name) {
      train::TrainConfig tc = cfg.train;
      tc.seed = model_train_seed(cfg.seed, name, static_cast<int>(si), rep);
      auto fm = train::fit(spec_from_config(cfg, name), ds, split, tc, nullptr,
                           static_cast<int>(si));
      auto probs = models::predict_probs(fm, ds, split.test);
      double nll = 0.0;
      for (std::size_t i = 0; i < split.test.size(); ++i)
        nll -= std::log(
            latent::clamp_prob(probs[i][ds.table.y[split.test[i]] - 1]));
      return nll / static_cast<double>(split.test.size());
    };
    rows[t] = Row{size, rep, eval_model(cfg.subsample_model_a),
                  eval_model(cfg.subsample_model_b)};
  });

  fs::create_directories(cfg.out);
  std::ofstream out(cfg.out / "subsample.csv");
  out << "size,split,nll_" << sanitize_filename(cfg.subsample_model_a) << ",nll_"
      << sanitize_filename(cfg.subsample_model_b) << ",nllr\n";
  for (const auto& r : rows)
    out << r.size << "," << r.rep << "," << format_double(r.nll_a) << ","
        << format_double(r.nll_b) << "," << format_double(r.nll_a - r.nll_b)
        << "\n";
}

void cmd_effect_curve(const RunConfig& cfg) {
  if (cfg.curve_model.empty())
    throw ConfigError("config: effect_curve.model is required");
  if (!fs::exists(cfg.curve_model))
    throw ConfigError(cat("effect_curve: model '", cfg.curve_model.string(),
                          "' does not exist"));
  auto members = models::load_any(cfg.curve_model);
  const models::FittedModel& fitted = members[0];

  std::vector<double> grid;
  for (std::size_t i = 0; i < cfg.curve_points; ++i)
    grid.push_back(cfg.curve_min + (cfg.curve_max - cfg.curve_min) *
                                       static_cast<double>(i) /
                                       static_cast<double>(cfg.curve_points - 1));
  auto curve = models::effect_curve(fitted, cfg.curve_feature, grid);

  std::optional<std::vector<double>> linear;
  if (!cfg.curve_linear_model.empty()) {
    auto lin = models::load_any(cfg.curve_linear_model)[0];
    auto coef = models::shift_coefficients(lin);
    auto it = std::find(coef.names.begin(), coef.names.end(), cfg.curve_feature);
    if (it == coef.names.end())
      throw ConfigError(cat("effect_curve: linear model has no coefficient for '",
                            cfg.curve_feature, "'"));
    const double beta = coef.values[static_cast<std::size_t>(it - coef.names.begin())];
    const std::size_t col = static_cast<std::size_t>(it - coef.names.begin());
    std::vector<double> vals;
    double mean = 0.0;
    for (double gk : grid) {
      const double z = lin.standardizer.active.empty()
                           ? gk
                           : (gk - lin.standardizer.mean[col]) /
                                 lin.standardizer.sd[col];
      vals.push_back(beta * z);
      mean += vals.back();
    }
    mean /= static_cast<double>(vals.size());
    for (double& v : vals) v -= mean;
    linear = std::move(vals);
  }

  // Bootstrap refits on resampled training data (the Fig. 6 protocol).
  std::vector<std::vector<double>> boot_curves;
  if (cfg.curve_bootstrap > 0) {
    data::Dataset ds = load_configured_dataset(cfg);
    boot_curves.resize(cfg.curve_bootstrap);
    const unsigned workers = resolve_workers(cfg);
    parallel_tasks(cfg.curve_bootstrap, workers, [&](std::size_t b) {
      Rng rng(derive_seed(cfg.seed, 0xB00B5, b));
      std::vector<std::size_t> sample;
      for (std::size_t i = 0; i < ds.size(); ++i)
        sample.push_back(rng.below(ds.size()));
      train::SplitIndices split;
      const std::size_t n_train = static_cast<std::size_t>(0.8 * sample.size());
      const std::size_t n_val = static_cast<std::size_t>(0.1 * sample.size());
      split.train.assign(sample.begin(), sample.begin() + n_train);
      split.val.assign(sample.begin() + n_train, sample.begin() + n_train + n_val);
      split.test.assign(sample.begin() + n_train + n_val, sample.end());
      train::TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.seed, 0xB00F, b);
      auto fm = train::fit(fitted.spec, ds, split, tc, nullptr, -1);
      boot_curves[b] = models::effect_curve(fm, cfg.curve_feature, grid);
    });
  }

  fs::create_directories(cfg.out);
  std::ofstream out(cfg.out / "effect_curve.csv");
  out << "curve,grid,value\n";
  for (std::size_t i = 0; i < grid.size(); ++i)
    out << "effect," << format_double(grid[i]) << "," << format_double(curve[i])
        << "\n";
  if (linear)
    for (std::size_t i = 0; i < grid.size(); ++i)
      out << "linear," << format_double(grid[i]) << ","
          << format_double((*linear)[i]) << "\n";
  for (std::size_t b = 0; b < boot_curves.size(); ++b)
    for (std::size_t i = 0; i < grid.size(); ++i)
      out << "boot" << b << "," << format_double(grid[i]) << ","
          << format_double(boot_curves[b][i]) << "\n";
}

}  // namespace dtm::cli
