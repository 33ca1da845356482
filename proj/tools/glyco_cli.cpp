// glyco: joint generative modeling of insulin/glucose trajectories and
// expected-utility treatment selection. Subcommands cover the whole
// pipeline: cohort -> preprocess -> train -> predict/decide/evaluate/finetune.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glyco/glyco.hpp"

namespace fs = std::filesystem;
using namespace glyco;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  return cfg;
}

std::string in_out_dir(const RunConfig& cfg, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(cfg.out_dir) / p).string();
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  long long ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Reproducibility sidecar: everything needed to regenerate the artifact
// bit-identically (resolved config + seed), plus wall time for the record.
void write_manifest(const std::string& artifact_path, const RunConfig& cfg,
                    const Stopwatch& watch,
                    const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = {
      {"artifact", artifact_path},
      {"config", to_json(cfg)},
      {"config_hash", Rng::fnv1a(to_json(cfg).dump())},
      {"seed", cfg.seed},
      {"versions",
       {{"tool", kToolVersion},
        {"dataset_format", kDatasetFormatVersion},
        {"checkpoint_format", kCheckpointFormatVersion}}},
      {"wall_time_ms", watch.ms()},
      {"extra", extra}};
  std::ofstream os(artifact_path + ".manifest.json", std::ios::binary);
  os << manifest.dump(2) << "\n";
}

void ensure_out_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
}

std::vector<Window> eval_windows_for_patient(const Grid& g, int K,
                                             int t_split) {
  if (t_split > 0) return {split_window(g, t_split, K)};
  return midnight_windows(g, K);
}

nlohmann::json tensor_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < t.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

int find_patient(const Dataset& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.grids.size(); ++i)
    if (ds.grids[i].patient_id == id) return int(i);
  throw std::invalid_argument("patient not found in dataset: " + id);
}

// ---- subcommands ----

int cmd_cohort(const RunConfig& cfg, const std::string& phenotype_path) {
  Stopwatch watch;
  ensure_out_dir(cfg);
  validate(cfg.cohort.sim);
  Cohort cohort = generate_cohort(cfg.cohort.patients, cfg.cohort.sim, cfg.seed);
  std::string path = in_out_dir(cfg, cfg.cohort_path);
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_patient_jsonl(os, cohort.records);
  }
  if (!phenotype_path.empty()) {
    std::string ppath = in_out_dir(cfg, phenotype_path);
    std::ofstream os(ppath, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + ppath);
    for (std::size_t i = 0; i < cohort.phenotypes.size(); ++i) {
      nlohmann::json j = to_json(cohort.phenotypes[i]);
      j["id"] = cohort.records[i].id;
      os << j.dump() << "\n";
    }
  }
  write_manifest(path, cfg, watch, {{"patients", cfg.cohort.patients}});
  log_info("wrote " + std::to_string(cohort.records.size()) + " patients to " +
           path);
  return 0;
}

int cmd_preprocess(const RunConfig& cfg) {
  Stopwatch watch;
  ensure_out_dir(cfg);
  std::vector<PatientRecord> records =
      read_patient_jsonl_file(in_out_dir(cfg, cfg.cohort_path));
  if (records.empty()) throw std::invalid_argument("empty cohort file");
  Dataset ds = preprocess_records(records);
  std::string path = in_out_dir(cfg, cfg.dataset_path);
  write_dataset(path, ds);
  write_manifest(path, cfg, watch, {{"patients", ds.grids.size()}});
  log_info("wrote dataset with " + std::to_string(ds.grids.size()) +
           " grids to " + path);
  return 0;
}

int cmd_train(const RunConfig& cfg, int steps, double val_fraction,
              int eval_every) {
  Stopwatch watch;
  ensure_out_dir(cfg);
  Dataset ds = read_dataset(in_out_dir(cfg, cfg.dataset_path));
  // patient-level validation split, seeded from the run seed
  Rng split_rng = Rng(cfg.seed).derive("train-val-split");
  std::vector<int> idx(ds.grids.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1],
              idx[std::size_t(split_rng.uniform_int(0, std::int64_t(i) - 1))]);
  std::size_t n_val = std::size_t(double(idx.size()) * val_fraction);
  std::vector<Grid> val_grids, train_grids;
  for (std::size_t i = 0; i < idx.size(); ++i)
    (i < n_val ? val_grids : train_grids)
        .push_back(ds.grids[std::size_t(idx[i])]);
  if (train_grids.empty()) throw std::invalid_argument("no training patients");

  TrainOptions opt;
  opt.steps = steps;
  opt.eval_every = eval_every;
  opt.verbose = log_level() >= LogLevel::debug;
  TrainResult tr = train(train_grids, val_grids, cfg.model,
                         Rng(cfg.seed).derive("train"), opt);

  std::string path = in_out_dir(cfg, cfg.checkpoint_path);
  save_checkpoint(path, tr.params);
  std::vector<std::vector<double>> trace_rows;
  for (std::size_t i = 0; i < tr.train_trace.size(); ++i)
    trace_rows.push_back({double(i + 1), tr.train_trace[i]});
  write_csv(path + ".trace.csv", {"step", "train_loss"}, trace_rows);
  write_manifest(path, cfg, watch,
                 {{"steps", steps},
                  {"best_val", tr.best_val},
                  {"best_step", tr.best_step}});
  log_info("checkpoint written to " + path);
  return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& patient, int t_split,
                int S, const std::string& out_name) {
  Stopwatch watch;
  ensure_out_dir(cfg);
  Dataset ds = read_dataset(in_out_dir(cfg, cfg.dataset_path));
  ModelParams model = load_checkpoint(in_out_dir(cfg, cfg.checkpoint_path));
  if (!model.trained) log_info("warning: checkpoint is untrained");
  int pi = find_patient(ds, patient);
  const Grid& g = ds.grids[std::size_t(pi)];
  int K = model.config.window;
  auto windows = eval_windows_for_patient(g, K, t_split);
  if (windows.empty())
    throw std::invalid_argument("no admissible prediction window");
  const Window& w = windows.front();

  Rng rng = Rng(cfg.seed).derive("predict");
  std::vector<Tensor> samples =
      sample_outcomes(model, w.future_treatments, w.context, S, rng);
  // per-hour quantiles over the sample set (nearest-rank on the sorted
  // draws, so levels are monotone by construction)
  const std::vector<double> levels = {0.05, 0.25, 0.5, 0.75, 0.95};
  nlohmann::json quantiles = nlohmann::json::object();
  for (double q : levels) {
    std::vector<double> qrow;
    for (int k = 0; k < K; ++k) {
      std::vector<double> cell;
      cell.reserve(samples.size());
      for (const Tensor& s : samples) cell.push_back(s(0, k));
      std::sort(cell.begin(), cell.end());
      qrow.push_back(cell[std::size_t(q * double(cell.size() - 1))]);
    }
    char key[8];
    std::snprintf(key, sizeof(key), "q%02d", int(q * 100 + 0.5));
    quantiles[key] = qrow;
  }
  Tensor mean_pred = predict_mean(model, w.context, w.future_treatments);
  std::vector<double> mean_row;
  for (int k = 0; k < K; ++k) mean_row.push_back(mean_pred(0, k));

  nlohmann::json out = {{"patient", patient},
                        {"t_split", w.context.t_split},
                        {"horizon", K},
                        {"samples", S},
                        {"mean", mean_row},
                        {"quantiles", quantiles}};
  std::string path = in_out_dir(cfg, out_name);
  std::ofstream os(path, std::ios::binary);
  os << out.dump(2) << "\n";
  write_manifest(path, cfg, watch);
  log_info("prediction written to " + path);
  return 0;
}

int cmd_decide(const RunConfig& cfg, const std::string& patient, int t_split,
               const std::string& out_name) {
  Stopwatch watch;
  ensure_out_dir(cfg);
  Dataset ds = read_dataset(in_out_dir(cfg, cfg.dataset_path));
  ModelParams model = load_checkpoint(in_out_dir(cfg, cfg.checkpoint_path));
  int pi = find_patient(ds, patient);
  auto windows = eval_windows_for_patient(ds.grids[std::size_t(pi)],
                                          model.config.window, t_split);
  if (windows.empty()) throw std::invalid_argument("no admissible window");
  const Context& ctx = windows.front().context;

  Rng rng = Rng(cfg.seed).derive("decide");
  DecisionResult r;
  if (cfg.decision.approach == "direct") {
    r = decide_direct(model, ctx, cfg.utility, cfg.decision.num_outcomes, rng);
  } else if (cfg.decision.approach == "indirect") {
    SearchConfig sc;
    sc.S = cfg.decision.num_outcomes;
    r = decide_indirect(model, ctx, cfg.utility, sc, rng);
  } else {
    r = decide_joint(model, ctx, cfg.utility, cfg.decision.num_treatments,
                     cfg.decision.num_outcomes, rng);
  }
  nlohmann::json out = {{"approach", cfg.decision.approach},
                        {"patient", patient},
                        {"t_split", ctx.t_split},
                        {"chosen_treatment", tensor_json(r.chosen_treatment)},
                        {"estimated_eu", r.estimated_eu},
                        {"per_candidate_eu", r.per_candidate_eu},
                        {"candidate_index", r.candidate_index},
                        {"budget_exhausted", r.budget_exhausted}};
  std::string path = in_out_dir(cfg, out_name);
  std::ofstream os(path, std::ios::binary);
  os << out.dump(2) << "\n";
  write_manifest(path, cfg, watch);
  log_info("decision written to " + path);
  return 0;
}

int cmd_finetune(const RunConfig& cfg, double alpha, int steps,
                 const std::string& out_name) {
  Stopwatch watch;
  ensure_out_dir(cfg);
  Dataset ds = read_dataset(in_out_dir(cfg, cfg.dataset_path));
  ModelParams model = load_checkpoint(in_out_dir(cfg, cfg.checkpoint_path));
  std::vector<Window> windows;
  for (const Grid& g : ds.grids)
    for (const Window& w : moving_windows(g, model.config.window, 6))
      windows.push_back(w);
  if (windows.empty()) throw std::invalid_argument("no training windows");
  Rng rng = Rng(cfg.seed).derive("finetune");
  FinetuneTrace trace =
      finetune_policy(model, windows, cfg.utility, alpha, steps, rng);
  std::string path = in_out_dir(cfg, out_name);
  save_checkpoint(path, model);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < trace.objective.size(); ++i)
    rows.push_back({double(i + 1), trace.objective[i]});
  write_csv(path + ".trace.csv", {"step", "objective"}, rows);
  write_manifest(path, cfg, watch, {{"alpha", alpha}, {"steps", steps}});
  log_info("fine-tuned checkpoint written to " + path);
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, int n_splits, int steps,
                 bool with_ablation, const std::string& phenotype_path) {
  Stopwatch watch;
  ensure_out_dir(cfg);
  Dataset ds = read_dataset(in_out_dir(cfg, cfg.dataset_path));

  SplitEvalOptions opt;
  opt.n_splits = n_splits;
  opt.seed = cfg.seed;
  opt.model = cfg.model;
  opt.train.steps = steps;
  opt.glucose_only_ablation = with_ablation;
  SplitEvalResult res = evaluate_splits(ds.grids, opt);

  int K = cfg.model.window;
  nlohmann::json per_split = nlohmann::json::array();
  double mae_m = 0, mae_pm = 0, mae_pt = 0, rmse_m = 0, rmse_pm = 0,
         rmse_pt = 0;
  double mae_ab = 0;
  std::vector<double> prof_m(std::size_t(K), 0), prof_pm(std::size_t(K), 0),
      prof_pt(std::size_t(K), 0);
  std::vector<long> prof_n(std::size_t(K), 0);
  for (int s = 0; s < n_splits; ++s) {
    const ForecastEval& fe = res.per_split[std::size_t(s)];
    nlohmann::json entry = {
        {"split", s},
        {"model", {{"mae", fe.model.mae}, {"rmse", fe.model.rmse}}},
        {"baseline_patient_mean",
         {{"mae", fe.baseline_patient.mae},
          {"rmse", fe.baseline_patient.rmse}}},
        {"baseline_population_time",
         {{"mae", fe.baseline_population.mae},
          {"rmse", fe.baseline_population.rmse}}},
        {"n_points", fe.model.n_points}};
    if (with_ablation)
      entry["glucose_only"] = {{"mae", res.glucose_only[std::size_t(s)].mae},
                               {"rmse", res.glucose_only[std::size_t(s)].rmse}};
    per_split.push_back(std::move(entry));
    mae_m += fe.model.mae;
    mae_pm += fe.baseline_patient.mae;
    mae_pt += fe.baseline_population.mae;
    rmse_m += fe.model.rmse;
    rmse_pm += fe.baseline_patient.rmse;
    rmse_pt += fe.baseline_population.rmse;
    if (with_ablation) mae_ab += res.glucose_only[std::size_t(s)].mae;
    for (int k = 0; k < K; ++k) {
      prof_m[std::size_t(k)] += fe.model.horizon_profile[std::size_t(k)].mae;
      prof_pm[std::size_t(k)] +=
          fe.baseline_patient.horizon_profile[std::size_t(k)].mae;
      prof_pt[std::size_t(k)] +=
          fe.baseline_population.horizon_profile[std::size_t(k)].mae;
      prof_n[std::size_t(k)] +=
          fe.model.horizon_profile[std::size_t(k)].n_points;
    }
  }
  double inv = 1.0 / double(n_splits);
  nlohmann::json metrics_doc = {
      {"n_splits", n_splits},
      {"per_split", per_split},
      {"means",
       {{"model", {{"mae", mae_m * inv}, {"rmse", rmse_m * inv}}},
        {"baseline_patient_mean",
         {{"mae", mae_pm * inv}, {"rmse", rmse_pm * inv}}},
        {"baseline_population_time",
         {{"mae", mae_pt * inv}, {"rmse", rmse_pt * inv}}}}}};
  if (with_ablation)
    metrics_doc["means"]["glucose_only"] = {{"mae", mae_ab * inv}};

  std::string mpath = in_out_dir(cfg, "metrics.json");
  {
    std::ofstream os(mpath, std::ios::binary);
    os << metrics_doc.dump(2) << "\n";
  }

  // horizon profile plot data (split means per hours-ahead)
  std::vector<std::vector<double>> hrows;
  for (int k = 0; k < K; ++k)
    hrows.push_back({double(k + 1), prof_m[std::size_t(k)] * inv,
                     prof_pm[std::size_t(k)] * inv,
                     prof_pt[std::size_t(k)] * inv,
                     double(prof_n[std::size_t(k)])});
  write_csv(in_out_dir(cfg, "horizon_profile.csv"),
            {"hours_ahead", "model_mae", "patient_mean_mae",
             "population_time_mae", "n_points"},
            hrows);

  // calibration histograms from the dataset grids
  std::vector<long> hour_counts(24, 0);
  std::vector<long> basal_hist(51, 0), bolus_hist(51, 0);
  std::vector<long> glucose_hist(36, 0);
  for (const Grid& g : ds.grids)
    for (int t = 0; t < g.T(); ++t) {
      if (g.measured(0, t)) {
        hour_counts[std::size_t(g.hours_of_day[std::size_t(t)])] += 1;
        int bin = std::min(35, std::max(0, int(g.outcomes(0, t))));
        glucose_hist[std::size_t(bin)] += 1;
      }
      int basal = std::min(50, int(g.treatments(kBasal, t)));
      int bolus = std::min(50, int(g.treatments(kBolus, t)));
      if (basal > 0) basal_hist[std::size_t(basal)] += 1;
      if (bolus > 0) bolus_hist[std::size_t(bolus)] += 1;
    }
  std::vector<std::vector<double>> hour_rows;
  for (int h = 0; h < 24; ++h)
    hour_rows.push_back({double(h), double(hour_counts[std::size_t(h)])});
  write_csv(in_out_dir(cfg, "calibration_measurement_hours.csv"),
            {"hour", "measurements"}, hour_rows);
  std::vector<std::vector<double>> dose_rows;
  for (int d = 1; d <= 50; ++d)
    dose_rows.push_back({double(d), double(basal_hist[std::size_t(d)]),
                         double(bolus_hist[std::size_t(d)])});
  write_csv(in_out_dir(cfg, "calibration_doses.csv"),
            {"dose_units", "basal_injections", "bolus_injections"}, dose_rows);
  std::vector<std::vector<double>> gl_rows;
  for (int b = 0; b < 36; ++b)
    gl_rows.push_back({double(b), double(glucose_hist[std::size_t(b)])});
  write_csv(in_out_dir(cfg, "calibration_glucose.csv"),
            {"glucose_mmol_l", "measurements"}, gl_rows);

  // per-candidate EU distribution for one held-out context under a model
  // trained on split 0
  Split sp0 = patient_splits(int(ds.grids.size()), n_splits, cfg.seed)[0];
  std::vector<Grid> tr0 = select_grids(ds.grids, sp0.train_idx);
  std::vector<Grid> va0 = select_grids(ds.grids, sp0.val_idx);
  TrainOptions topt;
  topt.steps = steps;
  Rng rng0(Rng(cfg.seed).derive("split-train", 0).next_u64());
  TrainResult tr = train(tr0, va0, cfg.model, rng0, topt);
  for (const Grid& g : va0) {
    auto ws = midnight_windows(g, cfg.model.window);
    if (ws.empty()) continue;
    Rng drng = Rng(cfg.seed).derive("eu-distribution");
    DecisionResult dr =
        decide_joint(tr.params, ws.front().context, cfg.utility,
                     cfg.decision.num_treatments, cfg.decision.num_outcomes,
                     drng);
    std::vector<std::vector<double>> eu_rows;
    for (std::size_t u = 0; u < dr.per_candidate_eu.size(); ++u)
      eu_rows.push_back({double(u), dr.per_candidate_eu[u]});
    write_csv(in_out_dir(cfg, "eu_candidates.csv"),
              {"candidate", "expected_utility"}, eu_rows);
    break;
  }

  // simulator-oracle policy comparison when phenotypes are available
  if (!phenotype_path.empty()) {
    std::ifstream is(in_out_dir(cfg, phenotype_path));
    if (!is) throw std::runtime_error("cannot open " + phenotype_path);
    std::map<std::string, Phenotype> phen_by_id;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      phen_by_id[j.at("id").get<std::string>()] = phenotype_from_json(j);
    }
    std::vector<Context> contexts;
    std::vector<Phenotype> phens;
    for (const Grid& g : va0) {
      auto ws = midnight_windows(g, cfg.model.window);
      if (ws.empty() || !phen_by_id.count(g.patient_id)) continue;
      contexts.push_back(ws.front().context);
      phens.push_back(phen_by_id.at(g.patient_id));
      if (contexts.size() >= 25) break;
    }
    if (!contexts.empty()) {
      Rng eval_rng = Rng(cfg.seed).derive("policy-eval");
      Rng policy_rng = Rng(cfg.seed).derive("policy-choices");
      auto run_policy =
          [&](const std::string& name,
              const std::function<Tensor(const Context&, int)>& f) {
            Rng r = eval_rng.derive(name);
            return policy_evaluation(f, contexts, phens, cfg.cohort.sim,
                                     cfg.utility, r, 100);
          };
      PolicyEvalResult direct =
          run_policy("direct", [&](const Context& c, int i) {
            Rng r = policy_rng.derive("direct", std::uint64_t(i));
            return decide_direct(tr.params, c, cfg.utility,
                                 cfg.decision.num_outcomes, r)
                .chosen_treatment;
          });
      PolicyEvalResult joint =
          run_policy("joint", [&](const Context& c, int i) {
            Rng r = policy_rng.derive("joint", std::uint64_t(i));
            return decide_joint(tr.params, c, cfg.utility,
                                cfg.decision.num_treatments,
                                cfg.decision.num_outcomes, r)
                .chosen_treatment;
          });
      nlohmann::json policy_doc = {
          {"contexts", contexts.size()},
          {"direct",
           {{"mean_utility", direct.mean_utility},
            {"time_in_range", direct.time_in_range},
            {"hypo_rate", direct.hypo_rate}}},
          {"joint",
           {{"mean_utility", joint.mean_utility},
            {"time_in_range", joint.time_in_range},
            {"hypo_rate", joint.hypo_rate}}}};
      std::ofstream pos(in_out_dir(cfg, "policy_eval.json"), std::ios::binary);
      pos << policy_doc.dump(2) << "\n";
    }
  }

  write_manifest(mpath, cfg, watch, {{"n_splits", n_splits}, {"steps", steps}});
  log_info("evaluation written to " + mpath);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint treatment/outcome trajectory generation and "
               "expected-utility insulin dosing"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "run configuration JSON");
  std::uint64_t seed_flag = 0;
  auto* seed_opt = app.add_option("--seed", seed_flag, "override config seed");
  std::string out_flag;
  auto* out_opt = app.add_option("--out", out_flag, "output directory");

  auto* cohort_cmd = app.add_subcommand("cohort", "generate a synthetic cohort");
  int patients_flag = -1;
  int days_flag = -1;
  std::string phenotype_path = "phenotypes.jsonl";
  cohort_cmd->add_option("--patients", patients_flag, "number of patients");
  cohort_cmd->add_option("--days", days_flag, "days per admission");
  cohort_cmd->add_option("--phenotypes", phenotype_path,
                         "phenotype sidecar JSONL (empty to skip)");

  auto* preprocess_cmd =
      app.add_subcommand("preprocess", "resample a cohort to hourly grids");

  auto* train_cmd = app.add_subcommand("train", "train the generative model");
  int steps_flag = 800;
  double val_fraction = 0.2;
  int eval_every = 50;
  std::string mode_flag;
  train_cmd->add_option("--steps", steps_flag, "optimizer steps");
  train_cmd->add_option("--val-fraction", val_fraction,
                        "patient fraction held out for validation");
  train_cmd->add_option("--eval-every", eval_every, "validation cadence");
  train_cmd->add_option("--mode", mode_flag,
                        "parametric | latent | autoregressive");

  auto* predict_cmd = app.add_subcommand("predict", "sample outcome forecasts");
  std::string patient_id;
  int t_split = 0;
  int n_samples = 200;
  std::string predict_out = "prediction.json";
  predict_cmd->add_option("--patient", patient_id, "patient id")->required();
  predict_cmd->add_option("--t-split", t_split,
                          "window split hour (0 = first midnight window)");
  predict_cmd->add_option("--samples", n_samples, "outcome samples");
  predict_cmd->add_option("--out-file", predict_out, "output JSON name");

  auto* decide_cmd =
      app.add_subcommand("decide", "choose a treatment for one context");
  std::string decide_patient;
  int decide_t_split = 0;
  std::string approach_flag;
  int u_flag = -1, s_flag = -1;
  std::string decide_out = "decision.json";
  decide_cmd->add_option("--patient", decide_patient, "patient id")->required();
  decide_cmd->add_option("--t-split", decide_t_split, "window split hour");
  decide_cmd->add_option("--approach", approach_flag,
                         "direct | indirect | joint");
  decide_cmd->add_option("--num-treatments", u_flag, "candidate plans U");
  decide_cmd->add_option("--num-outcomes", s_flag, "outcome samples S");
  decide_cmd->add_option("--out-file", decide_out, "output JSON name");

  auto* evaluate_cmd =
      app.add_subcommand("evaluate", "baselines, metrics, plot data");
  int splits_flag = -1;
  int eval_steps = 800;
  bool with_ablation = false;
  std::string eval_phenotypes;
  evaluate_cmd->add_option("--splits", splits_flag, "number of 50/50 splits");
  evaluate_cmd->add_option("--steps", eval_steps, "training steps per split");
  evaluate_cmd->add_flag("--ablation", with_ablation,
                         "also train the glucose-only conditional set");
  evaluate_cmd->add_option(
      "--phenotypes", eval_phenotypes,
      "phenotype sidecar for simulator-oracle policy eval");

  auto* finetune_cmd =
      app.add_subcommand("finetune", "goal-directed treatment-decoder tuning");
  double alpha_flag = 1.0;
  int finetune_steps = 500;
  std::string finetune_out = "model_finetuned.ckpt";
  finetune_cmd->add_option("--alpha", alpha_flag,
                           "utility weight in [0, 1] (1 = pure utility)");
  finetune_cmd->add_option("--steps", finetune_steps, "optimizer steps");
  finetune_cmd->add_option("--out-file", finetune_out,
                           "output checkpoint name");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*seed_opt) common.seed = seed_flag;
    if (*out_opt) common.out_dir = out_flag;
    RunConfig cfg = resolve_config(common);
    if (patients_flag > 0) cfg.cohort.patients = patients_flag;
    if (days_flag > 0) cfg.cohort.sim.days = days_flag;
    if (!mode_flag.empty()) cfg.model.mode = mode_from_string(mode_flag);
    if (!approach_flag.empty()) {
      if (approach_flag != "direct" && approach_flag != "indirect" &&
          approach_flag != "joint")
        throw std::invalid_argument("unknown approach: " + approach_flag);
      cfg.decision.approach = approach_flag;
    }
    if (u_flag > 0) cfg.decision.num_treatments = u_flag;
    if (s_flag > 0) cfg.decision.num_outcomes = s_flag;
    if (splits_flag > 0) cfg.eval.n_splits = splits_flag;

    if (*cohort_cmd) return cmd_cohort(cfg, phenotype_path);
    if (*preprocess_cmd) return cmd_preprocess(cfg);
    if (*train_cmd) return cmd_train(cfg, steps_flag, val_fraction, eval_every);
    if (*predict_cmd)
      return cmd_predict(cfg, patient_id, t_split, n_samples, predict_out);
    if (*decide_cmd)
      return cmd_decide(cfg, decide_patient, decide_t_split, decide_out);
    if (*evaluate_cmd)
      return cmd_evaluate(cfg, cfg.eval.n_splits, eval_steps, with_ablation,
                          eval_phenotypes);
    if (*finetune_cmd)
      return cmd_finetune(cfg, alpha_flag, finetune_steps, finetune_out);
    return 1;
  } catch (const std::invalid_argument& e) {
    log_error(e.what());
    return 1;
  } catch (const std::exception& e) {
    log_error(e.what());
    return 2;
  }
}
