#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cadsim/sim.hpp"
#include "cadsim/workload.hpp"

namespace cadsim {

struct SweepSpec {
  std::string axis;  // epsilon | cp_degree | max_doc_len | bandwidth
  std::vector<double> values;
};

/// A batch experiment: model + cluster + input distribution + the
/// strategies to compare, optionally swept along one axis.
struct ExperimentSpec {
  ModelConfig model;
  ClusterConfig cluster;
  LengthDistribution distribution;
  std::vector<std::string> strategies;
  int batches = 30;
  double epsilon = 0.0;
  double e_threshold = 0.01;
  Tokens tokens_per_device = 0;
  std::string mode = "dp";  // dp | pp
  int microbatches = 0;     // pp mode
  SimConfig sim;
  std::uint64_t seed = 0;
  SweepSpec sweep;
  int jobs = 1;
  std::optional<CostCoefficients> coeff_override;
};

void validate_spec(const ExperimentSpec& spec);

/// Known strategy names for dp mode: fixed, varlen, per_doc_cp, wlb_ideal,
/// disagg, disagg_signal, disagg_single_stream. pp mode: vanilla_1f1b,
/// cad_phase_sync.
bool strategy_known(const std::string& name, const std::string& mode);

struct StrategyResult {
  std::string sweep_axis;
  double sweep_value = 0;
  std::string strategy;
  int batches = 0;
  double mean_iteration_s = 0;
  double mean_idle_fraction = 0;
  double mean_memory_divergence = 0;
  double mean_wire_bytes = 0;
  int oom_runs = 0;
};

struct BatchRun {
  int batch = 0;
  std::string strategy;
  TimelineReport report;
  std::string plan_text;   // schedule export, disagg strategies only
  std::string trace_json;  // chrome trace, batch 0 only
};

struct RunOutput {
  std::vector<StrategyResult> rows;
  std::vector<BatchRun> details;
  std::vector<std::string> batch_docs_csv;  // sampled documents per batch
};

/// Samples `batches` document batches, builds every requested strategy,
/// simulates, and averages. Batches run concurrently up to spec.jobs;
/// outputs merge by batch index, so results are independent of the job
/// count. Deterministic for a fixed spec + seed.
RunOutput run_experiment(const ExperimentSpec& spec);

/// Deterministic, byte-stable formatting (%.17g).
void summary_csv(const std::vector<StrategyResult>& rows, std::ostream& out);

/// WLB-style candidate for one CP degree: documents spread over devices/cp
/// groups by squared-length LPT, each document head-tail sharded across its
/// group's cp ranks. cp == 1 reduces to assign_varlen.
BaselineAssignment wlb_candidate(const std::vector<Document>& docs,
                                 std::int64_t devices, std::int64_t cp,
                                 const ModelConfig& model,
                                 const CostCoefficients& coeff);

}  // namespace cadsim
