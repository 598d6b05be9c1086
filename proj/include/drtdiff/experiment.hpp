#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drtdiff/data.hpp"
#include "drtdiff/mixing.hpp"
#include "drtdiff/nn.hpp"
#include "drtdiff/strategies.hpp"
#include "drtdiff/topology.hpp"

namespace drtdiff::experiment {

struct TopologySpec {
    std::string kind = "ring";  ///< ring | hypercube | erdos_renyi | complete
    int num_agents = 16;        ///< ignored for hypercube
    int dim = 4;                ///< hypercube dimension
    double p = 0.1;             ///< Erdos-Renyi edge probability
    std::uint64_t seed = 1;
};

struct DataSpec {
    int num_classes = 10;
    int dim = 16;
    int per_class = 250;
    int test_per_class = 100;
    double spread = 1.0;
    std::uint64_t seed = 2;
    data::IntRange classes_per_agent{5, 8};
    data::IntRange samples_per_agent{60, 80};
    bool iid = false;
    std::string train_csv;  ///< optional external dataset (label,x1..xd); replaces the blobs
    std::string test_csv;
};

struct ModelSpec {
    std::vector<int> layer_dims{16, 32, 32, 10};
    std::string activation = "relu";
    bool bias = true;
};

struct RunSpec {
    double step_size = 0.05;
    int batch_size = 16;
    int rounds = 100;
    int consensus_steps = 3;
    int local_steps = 0;           ///< 0 = one local epoch
    std::string strategy = "both";  ///< classical | drt | both
    double kappa = 1e-8;
    double clip_N = 0.0;            ///< 0 = 2K
    std::uint64_t seed = 3;
    bool freeze_weights_within_round = false;
    std::string centroid = "phi";   ///< phi | mean
    int horizon = 50;
    int threads = 1;
};

struct OutputSpec {
    std::string dir;  ///< empty: nothing is written
    bool dump_tensors = false;
    int checkpoint_every = 0;  ///< 0: no checkpoints
};

struct ExperimentConfig {
    TopologySpec topology;
    DataSpec data;
    ModelSpec model;
    RunSpec run;
    OutputSpec output;

    /// Cross-field validation; throws ConfigError naming the offending field.
    void validate() const;
    std::vector<strategies::StrategyKind> strategies() const;
    double effective_clip_N(int num_agents) const;
};

/// JSON-compatible text; every field is optional and defaults as above.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

/// Fixed column order of metrics.csv.
inline constexpr const char* kMetricsHeader =
    "round,strategy,topology,lambda2,train_loss,train_acc,test_acc,gen_gap,disagreement,centroid_loss,"
    "centroid_grad_norm";
inline constexpr const char* kAgentsHeader = "round,strategy,agent,local_loss,train_loss,train_acc,test_acc";
inline constexpr const char* kDiagnosticsHeader =
    "strategy,round,iter,layer,horizon,residual,phi_min,phi_max,disagreement,grad_norm";

struct AgentMetrics {
    double local_loss = 0.0;  ///< mean minibatch loss seen during the round's local steps
    double train_loss = 0.0;  ///< on the agent's local data after combination
    double train_acc = 0.0;
    double test_acc = 0.0;
};

struct MetricsRow {
    int round = 0;
    std::string strategy;
    std::string topology;
    double lambda2 = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double gen_gap = 0.0;
    double disagreement = 0.0;
    double centroid_loss = 0.0;
    double centroid_grad_norm = 0.0;
    double wall_seconds = 0.0;  ///< not part of metrics.csv (kept out for reproducibility)
    std::vector<AgentMetrics> agents;
};

struct StrategyTrace {
    std::vector<mixing::MixingTensor> tensors;            ///< every combination step
    std::vector<std::vector<nn::LayeredParams>> history;  ///< params after each round; [0] = initial
};

struct StrategySummary {
    std::string strategy;
    double final_test_acc = 0.0;
    double final_train_acc = 0.0;
    double steady_test_acc = 0.0;  ///< mean over the last 20% of rounds
    double steady_gen_gap = 0.0;
};

struct ExperimentResult {
    std::string topology_label;
    double lambda2 = 0.0;
    std::vector<MetricsRow> rows;
    std::vector<StrategySummary> summary;
    std::map<std::string, StrategyTrace> traces;
};

struct RunOptions {
    bool keep_traces = false;  ///< keep tensors and per-round params in the result
};

/// Everything derived from the configuration before any training happens.
struct Setup {
    topology::Topology topo;
    topology::BaseWeights base;
    double lambda2 = 0.0;
    std::string topology_label;
    data::Dataset train;
    data::Dataset test;
    std::vector<data::IndexSet> assignments;
    data::Dataset pooled;  ///< union of the agents' local data
    nn::Architecture arch;
    nn::LayeredParams initial;
};

Setup prepare(const ExperimentConfig& cfg);

/// Runs every requested strategy on the shared setup, computes metrics and
/// writes artifacts when cfg.output.dir is set.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& is);

struct ReportCell {
    double steady_test_acc = 0.0;
    double steady_gen_gap = 0.0;
    int runs = 0;
};

struct ReportRow {
    std::string topology;
    double lambda2 = 0.0;
    std::map<std::string, ReportCell> by_strategy;
};

struct Report {
    std::vector<std::string> strategies;  ///< column order
    std::vector<ReportRow> rows;
};

/// Mean of the last 20% of rounds (at least one) per (file, strategy),
/// averaged across files sharing a topology.
Report compare_report(const std::vector<std::filesystem::path>& csv_paths);
Report compare_rows(const std::vector<std::vector<MetricsRow>>& runs);
void print_report(std::ostream& os, const Report& r);

/// Post-hoc analysis of a run directory that holds tensor dumps and
/// checkpoints; writes diagnostics.csv into the directory and returns its rows
/// as text.
std::string diagnose(const std::filesystem::path& run_dir, int horizon, std::ostream* log = nullptr);

/// Mean of the last ceil(0.2 n) values (at least one).
double tail_mean(const std::vector<double>& values);

}  // namespace drtdiff::experiment
