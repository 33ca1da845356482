#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "glyco/cohort.hpp"
#include "glyco/model.hpp"
#include "glyco/utility.hpp"

namespace glyco {

struct DecisionConfig {
  std::string approach = "joint";  // direct | indirect | joint
  int num_treatments = 100;        // U
  int num_outcomes = 200;          // S
};

struct EvalConfig {
  int n_splits = 30;
};

struct CohortRunConfig {
  int patients = 100;
  SimConfig sim;
};

// One JSON document drives every subcommand; flags override fields.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string cohort_path = "cohort.jsonl";
  std::string dataset_path = "dataset.bin";
  std::string checkpoint_path = "model.ckpt";
  std::string out_dir = ".";
  ModelConfig model;
  UtilityConfig utility;
  DecisionConfig decision;
  EvalConfig eval;
  CohortRunConfig cohort;
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"cohort_path", c.cohort_path},
          {"dataset_path", c.dataset_path},
          {"checkpoint_path", c.checkpoint_path},
          {"out_dir", c.out_dir},
          {"model", to_json(c.model)},
          {"utility", to_json(c.utility)},
          {"decision",
           {{"approach", c.decision.approach},
            {"num_treatments", c.decision.num_treatments},
            {"num_outcomes", c.decision.num_outcomes}}},
          {"eval", {{"n_splits", c.eval.n_splits}}},
          {"cohort",
           {{"patients", c.cohort.patients}, {"sim", to_json(c.cohort.sim)}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.cohort_path = j.at("cohort_path").get<std::string>();
  c.dataset_path = j.at("dataset_path").get<std::string>();
  c.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.model = model_config_from_json(j.at("model"));
  c.utility = utility_config_from_json(j.at("utility"));
  c.decision.approach = j.at("decision").at("approach").get<std::string>();
  c.decision.num_treatments =
      j.at("decision").at("num_treatments").get<int>();
  c.decision.num_outcomes = j.at("decision").at("num_outcomes").get<int>();
  c.eval.n_splits = j.at("eval").at("n_splits").get<int>();
  c.cohort.patients = j.at("cohort").at("patients").get<int>();
  c.cohort.sim = sim_config_from_json(j.at("cohort").at("sim"));
  if (c.decision.approach != "direct" && c.decision.approach != "indirect" &&
      c.decision.approach != "joint")
    throw std::invalid_argument("unknown decision approach: " +
                                c.decision.approach);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  is >> j;
  return run_config_from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write config " + path);
  os << to_json(c).dump(2) << "\n";
}

}  // namespace glyco
