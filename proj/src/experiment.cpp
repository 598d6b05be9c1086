#include "drtdiff/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "drtdiff/diagnostics.hpp"
#include "drtdiff/error.hpp"
#include "drtdiff/parallel.hpp"
#include "drtdiff/rng.hpp"
#include "json.hpp"

namespace drtdiff::experiment {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config ----

namespace {

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(section + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(section + "." + key + ": unknown field");
    }
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
    }
}

void read_range(const json& j, const char* key, data::IntRange& out, const std::string& section) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
        throw ConfigError(section + "." + key + ": expected [lo, hi] integers");
    out = {v[0].get<int>(), v[1].get<int>()};
}

json to_json(const ExperimentConfig& c) {
    return json{
        {"topology",
         {{"kind", c.topology.kind},
          {"num_agents", c.topology.num_agents},
          {"dim", c.topology.dim},
          {"p", c.topology.p},
          {"seed", c.topology.seed}}},
        {"data",
         {{"num_classes", c.data.num_classes},
          {"dim", c.data.dim},
          {"per_class", c.data.per_class},
          {"test_per_class", c.data.test_per_class},
          {"spread", c.data.spread},
          {"seed", c.data.seed},
          {"classes_per_agent", {c.data.classes_per_agent.lo, c.data.classes_per_agent.hi}},
          {"samples_per_agent", {c.data.samples_per_agent.lo, c.data.samples_per_agent.hi}},
          {"iid", c.data.iid},
          {"train_csv", c.data.train_csv},
          {"test_csv", c.data.test_csv}}},
        {"model", {{"layer_dims", c.model.layer_dims}, {"activation", c.model.activation}, {"bias", c.model.bias}}},
        {"run",
         {{"step_size", c.run.step_size},
          {"batch_size", c.run.batch_size},
          {"rounds", c.run.rounds},
          {"consensus_steps", c.run.consensus_steps},
          {"local_steps", c.run.local_steps},
          {"strategy", c.run.strategy},
          {"kappa", c.run.kappa},
          {"clip_N", c.run.clip_N},
          {"seed", c.run.seed},
          {"freeze_weights_within_round", c.run.freeze_weights_within_round},
          {"centroid", c.run.centroid},
          {"horizon", c.run.horizon},
          {"threads", c.run.threads}}},
        {"output",
         {{"dir", c.output.dir}, {"dump_tensors", c.output.dump_tensors}, {"checkpoint_every", c.output.checkpoint_every}}},
    };
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    reject_unknown(j, "config", {"topology", "data", "model", "run", "output"});
    if (j.contains("topology")) {
        const auto& t = j["topology"];
        reject_unknown(t, "topology", {"kind", "num_agents", "dim", "p", "seed"});
        read_field(t, "kind", c.topology.kind, "topology");
        read_field(t, "num_agents", c.topology.num_agents, "topology");
        read_field(t, "dim", c.topology.dim, "topology");
        read_field(t, "p", c.topology.p, "topology");
        read_field(t, "seed", c.topology.seed, "topology");
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        reject_unknown(d, "data", {"num_classes", "dim", "per_class", "test_per_class", "spread", "seed",
                                   "classes_per_agent", "samples_per_agent", "iid", "train_csv", "test_csv"});
        read_field(d, "num_classes", c.data.num_classes, "data");
        read_field(d, "dim", c.data.dim, "data");
        read_field(d, "per_class", c.data.per_class, "data");
        read_field(d, "test_per_class", c.data.test_per_class, "data");
        read_field(d, "spread", c.data.spread, "data");
        read_field(d, "seed", c.data.seed, "data");
        read_range(d, "classes_per_agent", c.data.classes_per_agent, "data");
        read_range(d, "samples_per_agent", c.data.samples_per_agent, "data");
        read_field(d, "iid", c.data.iid, "data");
        read_field(d, "train_csv", c.data.train_csv, "data");
        read_field(d, "test_csv", c.data.test_csv, "data");
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        reject_unknown(m, "model", {"layer_dims", "activation", "bias"});
        read_field(m, "layer_dims", c.model.layer_dims, "model");
        read_field(m, "activation", c.model.activation, "model");
        read_field(m, "bias", c.model.bias, "model");
    }
    if (j.contains("run")) {
        const auto& r = j["run"];
        reject_unknown(r, "run", {"step_size", "batch_size", "rounds", "consensus_steps", "local_steps", "strategy",
                                  "kappa", "clip_N", "seed", "freeze_weights_within_round", "centroid", "horizon",
                                  "threads"});
        read_field(r, "step_size", c.run.step_size, "run");
        read_field(r, "batch_size", c.run.batch_size, "run");
        read_field(r, "rounds", c.run.rounds, "run");
        read_field(r, "consensus_steps", c.run.consensus_steps, "run");
        read_field(r, "local_steps", c.run.local_steps, "run");
        read_field(r, "strategy", c.run.strategy, "run");
        read_field(r, "kappa", c.run.kappa, "run");
        read_field(r, "clip_N", c.run.clip_N, "run");
        read_field(r, "seed", c.run.seed, "run");
        read_field(r, "freeze_weights_within_round", c.run.freeze_weights_within_round, "run");
        read_field(r, "centroid", c.run.centroid, "run");
        read_field(r, "horizon", c.run.horizon, "run");
        read_field(r, "threads", c.run.threads, "run");
    }
    if (j.contains("output")) {
        const auto& o = j["output"];
        reject_unknown(o, "output", {"dir", "dump_tensors", "checkpoint_every"});
        read_field(o, "dir", c.output.dir, "output");
        read_field(o, "dump_tensors", c.output.dump_tensors, "output");
        read_field(o, "checkpoint_every", c.output.checkpoint_every, "output");
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void ExperimentConfig::validate() const {
    const auto& t = topology;
    if (t.kind != "ring" && t.kind != "hypercube" && t.kind != "erdos_renyi" && t.kind != "complete")
        throw ConfigError("topology.kind: expected ring, hypercube, erdos_renyi or complete, got '" + t.kind + "'");
    if (t.kind == "hypercube") {
        if (t.dim < 1 || t.dim > 10) throw ConfigError("topology.dim: must be in [1, 10]");
    } else if (t.num_agents < 2) {
        throw ConfigError("topology.num_agents: must be >= 2");
    }
    if (t.kind == "erdos_renyi" && !(t.p > 0.0 && t.p <= 1.0)) throw ConfigError("topology.p: must be in (0, 1]");

    const auto& d = data;
    const bool external = !d.train_csv.empty();
    if (!external) {
        if (d.num_classes < 2) throw ConfigError("data.num_classes: must be >= 2");
        if (d.dim < 2) throw ConfigError("data.dim: must be >= 2");
        if (d.per_class < 1) throw ConfigError("data.per_class: must be >= 1");
        if (d.test_per_class < 1) throw ConfigError("data.test_per_class: must be >= 1");
        if (!(d.spread >= 0.0)) throw ConfigError("data.spread: must be >= 0");
        if (d.classes_per_agent.hi > d.num_classes)
            throw ConfigError("data.classes_per_agent: upper bound exceeds data.num_classes");
    }
    if (d.classes_per_agent.lo < 1 || d.classes_per_agent.lo > d.classes_per_agent.hi)
        throw ConfigError("data.classes_per_agent: need 1 <= lo <= hi");
    if (d.samples_per_agent.lo < 1 || d.samples_per_agent.lo > d.samples_per_agent.hi)
        throw ConfigError("data.samples_per_agent: need 1 <= lo <= hi");

    const auto& m = model;
    if (m.layer_dims.size() < 2) throw ConfigError("model.layer_dims: need at least two entries");
    if (static_cast<int>(m.layer_dims.size()) - 1 > mixing::kMaxLayers)
        throw ConfigError("model.layer_dims: at most " + std::to_string(mixing::kMaxLayers) + " layers");
    for (int v : m.layer_dims)
        if (v < 1) throw ConfigError("model.layer_dims: every entry must be >= 1");
    if (!external) {
        if (m.layer_dims.front() != d.dim) throw ConfigError("model.layer_dims: first entry must equal data.dim");
        if (m.layer_dims.back() != d.num_classes)
            throw ConfigError("model.layer_dims: last entry must equal data.num_classes");
    }
    try {
        nn::parse_activation(m.activation);
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("model.activation: ") + e.what());
    }

    const auto& r = run;
    if (!(r.step_size > 0.0) || !std::isfinite(r.step_size)) throw ConfigError("run.step_size: must be > 0");
    if (r.batch_size < 1) throw ConfigError("run.batch_size: must be >= 1");
    if (r.rounds < 0) throw ConfigError("run.rounds: must be >= 0");
    if (r.consensus_steps < 0) throw ConfigError("run.consensus_steps: must be >= 0");
    if (r.local_steps < 0) throw ConfigError("run.local_steps: must be >= 0");
    if (r.strategy != "both") {
        try {
            strategies::parse_strategy(r.strategy);
        } catch (const InvalidArgument&) {
            throw ConfigError("run.strategy: expected classical, drt or both, got '" + r.strategy + "'");
        }
    }
    if (!(r.kappa >= 0.0)) throw ConfigError("run.kappa: must be >= 0");
    if (r.clip_N != 0.0 && !(r.clip_N >= 1.0)) throw ConfigError("run.clip_N: must be >= 1 (or 0 for 2K)");
    if (r.centroid != "phi" && r.centroid != "mean") throw ConfigError("run.centroid: expected phi or mean");
    if (r.horizon < 1) throw ConfigError("run.horizon: must be >= 1");
    if (r.threads < 1) throw ConfigError("run.threads: must be >= 1");
    if (output.checkpoint_every < 0) throw ConfigError("output.checkpoint_every: must be >= 0");
}

std::vector<strategies::StrategyKind> ExperimentConfig::strategies() const {
    if (run.strategy == "both")
        return {strategies::StrategyKind::classical_diffusion, strategies::StrategyKind::drt_diffusion};
    return {strategies::parse_strategy(run.strategy)};
}

double ExperimentConfig::effective_clip_N(int num_agents) const {
    return run.clip_N == 0.0 ? 2.0 * num_agents : run.clip_N;
}

// ----------------------------------------------------------------- setup ----

namespace {

topology::Topology build_topology(const TopologySpec& t) {
    if (t.kind == "ring") return topology::build_ring(t.num_agents);
    if (t.kind == "hypercube") return topology::build_hypercube(t.dim);
    if (t.kind == "erdos_renyi") return topology::build_erdos_renyi(t.num_agents, t.p, t.seed);
    return topology::build_complete(t.num_agents);
}

data::Dataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("data: cannot open " + path);
    return data::read_csv(in);
}

}  // namespace

Setup prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    Setup s;
    s.topo = build_topology(cfg.topology);
    const int K = s.topo.num_agents();
    s.base = topology::metropolis_weights(s.topo);
    s.lambda2 = topology::mixing_rate(s.base);
    s.topology_label = cfg.topology.kind + "-K" + std::to_string(K);

    if (cfg.data.train_csv.empty()) {
        const auto model = data::make_blob_model(cfg.data.num_classes, cfg.data.dim, cfg.data.spread, cfg.data.seed);
        s.train = data::sample_blobs(model, cfg.data.per_class, cfg.data.seed);
        s.test = data::sample_blobs(model, cfg.data.test_per_class, derive_seed(cfg.data.seed, {0x74657374ULL}));
    } else {
        s.train = load_dataset_csv(cfg.data.train_csv);
        if (cfg.data.test_csv.empty()) throw ConfigError("data.test_csv: required when data.train_csv is set");
        s.test = load_dataset_csv(cfg.data.test_csv);
        if (s.test.dim() != s.train.dim()) throw ConfigError("data.test_csv: feature count differs from train_csv");
        s.test.num_classes = s.train.num_classes = std::max(s.train.num_classes, s.test.num_classes);
        if (cfg.model.layer_dims.front() != static_cast<int>(s.train.dim()))
            throw ConfigError("model.layer_dims: first entry must equal the CSV feature count");
        if (cfg.model.layer_dims.back() != s.train.num_classes)
            throw ConfigError("model.layer_dims: last entry must equal the CSV class count");
    }
    s.train.validate();

    data::PartitionSpec ps;
    ps.num_agents = K;
    ps.classes_per_agent = cfg.data.classes_per_agent;
    ps.samples_per_agent = cfg.data.samples_per_agent;
    ps.iid = cfg.data.iid;
    ps.seed = cfg.data.seed;
    s.assignments = data::partition(s.train, ps);

    data::IndexSet all;
    for (const auto& a : s.assignments) all.insert(all.end(), a.begin(), a.end());
    std::sort(all.begin(), all.end());
    const auto pooled_batch = data::gather(s.train, all);
    s.pooled = data::Dataset{pooled_batch.inputs, pooled_batch.labels, s.train.num_classes};

    s.arch.layer_dims = cfg.model.layer_dims;
    s.arch.activation = nn::parse_activation(cfg.model.activation);
    s.arch.bias = cfg.model.bias;
    s.arch.validate();
    s.initial = nn::init_params(s.arch, derive_seed(cfg.run.seed, {0x6d6f64656cULL}));
    return s;
}

// ------------------------------------------------------------------- run ----

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double mean_of(const std::vector<AgentMetrics>& a, double AgentMetrics::*field) {
    double s = 0.0;
    for (const auto& m : a) s += m.*field;
    return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

std::vector<AgentMetrics> evaluate_agents(const Setup& s, const std::vector<strategies::AgentState>& states,
                                          const std::vector<double>& local_loss, int threads) {
    std::vector<AgentMetrics> out(states.size());
    const nn::Batch test = data::as_batch(s.test);
    parallel_for(states.size(), threads, [&](std::size_t k) {
        const nn::Batch local = data::gather(s.train, s.assignments[k]);
        AgentMetrics m;
        m.local_loss = local_loss.empty() ? 0.0 : local_loss[k];
        if (local.size() > 0) {
            m.train_loss = nn::loss(s.arch, states[k].params, local);
            m.train_acc = nn::accuracy(s.arch, states[k].params, local);
        }
        m.test_acc = nn::accuracy(s.arch, states[k].params, test);
        out[k] = m;
    });
    return out;
}

void fill_centroid_metrics(const Setup& s, const ExperimentConfig& cfg, std::span<const mixing::MixingTensor> tensors,
                           long last_iter, const std::vector<nn::LayeredParams>& params, MetricsRow& row) {
    const int K = s.topo.num_agents();
    const int L = s.arch.num_layers();
    std::vector<diagnostics::PhiEstimate> phi;
    if (cfg.run.centroid == "mean" || last_iter < 0 || tensors.empty()) {
        phi = diagnostics::uniform_phi(K, L);
    } else {
        for (int p = 0; p < L; ++p)
            phi.push_back(diagnostics::estimate_phi(tensors, p, last_iter, cfg.run.horizon, true));
    }
    const auto center = diagnostics::centroid(params, phi);
    row.disagreement = diagnostics::network_disagreement(params, center);
    const auto lg = nn::loss_and_grad(s.arch, center, data::as_batch(s.pooled));
    row.centroid_loss = lg.loss;
    double g = 0.0;
    for (const auto& l : lg.grad.layers)
        for (double v : l) g += v * v;
    row.centroid_grad_norm = std::sqrt(g);
}

void write_checkpoint(const fs::path& path, const std::vector<strategies::AgentState>& states) {
    std::ofstream os(path);
    os << states.size() << '\n';
    for (const auto& st : states) nn::write_params(os, st.params);
}

std::vector<nn::LayeredParams> read_checkpoint(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataUnavailable("cannot open checkpoint " + path.string());
    std::size_t K = 0;
    if (!(is >> K) || K == 0) throw SchemaMismatch("checkpoint: missing agent count in " + path.string());
    std::vector<nn::LayeredParams> out;
    for (std::size_t k = 0; k < K; ++k) out.push_back(nn::read_params(is));
    return out;
}

}  // namespace

double tail_mean(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    const std::size_t n = values.size();
    const std::size_t tail = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n))));
    double s = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) s += values[i];
    return s / static_cast<double>(tail);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
    const Setup s = prepare(cfg);
    const int K = s.topo.num_agents();
    const int R = cfg.run.consensus_steps;
    const bool write = !cfg.output.dir.empty();
    const fs::path dir = cfg.output.dir;
    if (write) {
        fs::create_directories(dir);
        std::ofstream(dir / "config.json") << serialize_config(cfg);
        std::ofstream topo_out(dir / "topology.txt");
        topology::write_edge_list(topo_out, s.topo);
    }

    ExperimentResult result;
    result.topology_label = s.topology_label;
    result.lambda2 = s.lambda2;

    mixing::DrtConfig drt{cfg.run.kappa, cfg.effective_clip_N(K)};
    strategies::RoundSpec spec;
    spec.step_size = cfg.run.step_size;
    spec.batch_size = static_cast<std::size_t>(cfg.run.batch_size);
    spec.local_steps = cfg.run.local_steps;
    spec.consensus_steps = R;

    for (const auto kind : cfg.strategies()) {
        const std::string name = strategies::to_string(kind);
        auto states = strategies::make_agents(K, s.initial, cfg.run.seed);
        StrategyTrace trace;
        std::vector<std::vector<nn::LayeredParams>> history;
        auto snapshot = [&] {
            std::vector<nn::LayeredParams> v;
            for (const auto& st : states) v.push_back(st.params);
            return v;
        };
        history.push_back(snapshot());
        std::vector<MetricsRow> rows;
        std::vector<std::vector<AgentMetrics>> agent_rows;

        if (write && cfg.output.checkpoint_every > 0) {
            fs::create_directories(dir / "checkpoints" / name);
            write_checkpoint(dir / "checkpoints" / name / "round_0.txt", states);
        }

        auto make_row = [&](int round, const std::vector<double>& local_loss, double wall) {
            MetricsRow row;
            row.round = round;
            row.strategy = name;
            row.topology = s.topology_label;
            row.lambda2 = s.lambda2;
            row.agents = evaluate_agents(s, states, local_loss, cfg.run.threads);
            row.train_loss = mean_of(row.agents, &AgentMetrics::train_loss);
            row.train_acc = mean_of(row.agents, &AgentMetrics::train_acc);
            row.test_acc = mean_of(row.agents, &AgentMetrics::test_acc);
            row.gen_gap = diagnostics::generalization_gap(row.train_acc, row.test_acc);
            row.wall_seconds = wall;
            return row;
        };

        if (cfg.run.rounds == 0) rows.push_back(make_row(0, {}, 0.0));
        for (int round = 1; round <= cfg.run.rounds; ++round) {
            const auto t0 = std::chrono::steady_clock::now();
            strategies::RoundContext ctx;
            ctx.arch = &s.arch;
            ctx.dataset = &s.train;
            ctx.assignments = s.assignments;
            ctx.topo = &s.topo;
            ctx.base = &s.base;
            ctx.drt = drt;
            ctx.spec = spec;
            ctx.kind = kind;
            ctx.round = round;
            ctx.first_iteration = static_cast<long>(round - 1) * R;
            ctx.threads = cfg.run.threads;
            ctx.freeze_weights_within_round = cfg.run.freeze_weights_within_round;
            ctx.record_tensors = true;
            strategies::RoundTelemetry tel;
            try {
                tel = strategies::run_round(states, ctx);
            } catch (const Error& e) {
                throw NumericalFailure("round " + std::to_string(round) + " (" + name + "): " + e.what());
            }
            for (auto& t : tel.tensors) trace.tensors.push_back(std::move(t));
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            rows.push_back(make_row(round, tel.agent_loss, wall));
            history.push_back(snapshot());
            if (write && cfg.output.checkpoint_every > 0 && round % cfg.output.checkpoint_every == 0)
                write_checkpoint(dir / "checkpoints" / name / ("round_" + std::to_string(round) + ".txt"), states);
        }

        // Centroid metrics need the tensors that follow each round.
        for (auto& row : rows) {
            const long last_iter = static_cast<long>(row.round) * R - 1;
            fill_centroid_metrics(s, cfg, trace.tensors, last_iter, history[row.round], row);
        }

        StrategySummary sum;
        sum.strategy = name;
        sum.final_test_acc = rows.back().test_acc;
        sum.final_train_acc = rows.back().train_acc;
        std::vector<double> acc, gap;
        for (const auto& r : rows) {
            acc.push_back(r.test_acc);
            gap.push_back(r.gen_gap);
        }
        sum.steady_test_acc = tail_mean(acc);
        sum.steady_gen_gap = tail_mean(gap);
        result.summary.push_back(sum);

        if (write && cfg.output.dump_tensors) {
            fs::create_directories(dir / "tensors");
            std::ofstream os(dir / "tensors" / (name + ".txt"));
            for (const auto& t : trace.tensors) mixing::write_tensor(os, t);
        }
        for (auto& r : rows) result.rows.push_back(std::move(r));
        if (opts.keep_traces) {
            trace.history = std::move(history);
            result.traces[name] = std::move(trace);
        }
    }

    if (write) {
        std::ofstream m(dir / "metrics.csv");
        write_metrics_csv(m, result.rows);
        std::ofstream a(dir / "agents.csv");
        a << kAgentsHeader << '\n';
        for (const auto& r : result.rows)
            for (std::size_t k = 0; k < r.agents.size(); ++k) {
                const auto& g = r.agents[k];
                a << r.round << ',' << r.strategy << ',' << k << ',' << fmt(g.local_loss) << ',' << fmt(g.train_loss)
                  << ',' << fmt(g.train_acc) << ',' << fmt(g.test_acc) << '\n';
            }
        std::ofstream t(dir / "timing.csv");
        t << "round,strategy,wall_seconds\n";
        for (const auto& r : result.rows) t << r.round << ',' << r.strategy << ',' << fmt(r.wall_seconds) << '\n';
        json sj;
        sj["topology"] = result.topology_label;
        sj["lambda2"] = result.lambda2;
        for (const auto& sm : result.summary)
            sj["strategies"][sm.strategy] = {{"final_test_acc", sm.final_test_acc},
                                             {"final_train_acc", sm.final_train_acc},
                                             {"steady_test_acc", sm.steady_test_acc},
                                             {"steady_gen_gap", sm.steady_gen_gap}};
        std::ofstream(dir / "summary.json") << sj.dump(2) << '\n';
    }
    return result;
}

// ------------------------------------------------------------------- csv ----

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << kMetricsHeader << '\n';
    for (const auto& r : rows)
        os << r.round << ',' << r.strategy << ',' << r.topology << ',' << fmt(r.lambda2) << ',' << fmt(r.train_loss)
           << ',' << fmt(r.train_acc) << ',' << fmt(r.test_acc) << ',' << fmt(r.gen_gap) << ','
           << fmt(r.disagreement) << ',' << fmt(r.centroid_loss) << ',' << fmt(r.centroid_grad_norm) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader)
        throw SchemaMismatch("metrics csv: header does not match the expected column order");
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (cells.size() != 11) throw SchemaMismatch("metrics csv line " + std::to_string(lineno) + ": expected 11 fields");
        MetricsRow r;
        try {
            r.round = std::stoi(cells[0]);
            r.strategy = cells[1];
            r.topology = cells[2];
            r.lambda2 = std::stod(cells[3]);
            r.train_loss = std::stod(cells[4]);
            r.train_acc = std::stod(cells[5]);
            r.test_acc = std::stod(cells[6]);
            r.gen_gap = std::stod(cells[7]);
            r.disagreement = std::stod(cells[8]);
            r.centroid_loss = std::stod(cells[9]);
            r.centroid_grad_norm = std::stod(cells[10]);
        } catch (const std::exception&) {
            throw SchemaMismatch("metrics csv line " + std::to_string(lineno) + ": non-numeric field");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------- report ----

Report compare_rows(const std::vector<std::vector<MetricsRow>>& runs) {
    Report rep;
    std::map<std::string, std::size_t> row_index;
    for (const auto& run : runs) {
        std::map<std::string, std::vector<const MetricsRow*>> by_strategy;
        for (const auto& r : run) by_strategy[r.strategy].push_back(&r);
        for (auto& [strategy, rows] : by_strategy) {
            std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->round < b->round; });
            std::vector<double> acc, gap;
            for (const auto* r : rows) {
                acc.push_back(r->test_acc);
                gap.push_back(r->gen_gap);
            }
            const std::string& topo = rows.front()->topology;
            auto it = row_index.find(topo);
            if (it == row_index.end()) {
                it = row_index.emplace(topo, rep.rows.size()).first;
                rep.rows.push_back(ReportRow{topo, rows.front()->lambda2, {}});
            }
            auto& cell = rep.rows[it->second].by_strategy[strategy];
            // Running mean across files.
            const double n = cell.runs;
            cell.steady_test_acc = (cell.steady_test_acc * n + tail_mean(acc)) / (n + 1);
            cell.steady_gen_gap = (cell.steady_gen_gap * n + tail_mean(gap)) / (n + 1);
            cell.runs += 1;
            if (std::find(rep.strategies.begin(), rep.strategies.end(), strategy) == rep.strategies.end())
                rep.strategies.push_back(strategy);
        }
    }
    return rep;
}

Report compare_report(const std::vector<fs::path>& csv_paths) {
    std::vector<std::vector<MetricsRow>> runs;
    for (const auto& p : csv_paths) {
        std::ifstream in(p);
        if (!in) throw SchemaMismatch("report: cannot open " + p.string());
        try {
            runs.push_back(read_metrics_csv(in));
        } catch (const SchemaMismatch& e) {
            throw SchemaMismatch(p.string() + ": " + e.what());
        }
    }
    return compare_rows(runs);
}

void print_report(std::ostream& os, const Report& r) {
    os << std::left << std::setw(18) << "topology" << std::setw(9) << "lambda2";
    for (const auto& s : r.strategies) os << std::setw(24) << (s + " acc% / gap%");
    os << '\n';
    for (const auto& row : r.rows) {
        os << std::setw(18) << row.topology << std::setw(9) << fmt(std::round(row.lambda2 * 1000) / 1000);
        for (const auto& s : r.strategies) {
            auto it = row.by_strategy.find(s);
            if (it == row.by_strategy.end()) {
                os << std::setw(24) << "-";
                continue;
            }
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f / %.2f (n=%d)", 100 * it->second.steady_test_acc,
                          100 * it->second.steady_gen_gap, it->second.runs);
            os << std::setw(24) << buf;
        }
        os << '\n';
    }
}

// -------------------------------------------------------------- diagnose ----

std::string diagnose(const fs::path& run_dir, int horizon, std::ostream* log) {
    if (horizon < 1) throw InvalidArgument("diagnose: horizon must be >= 1");
    ExperimentConfig cfg = load_config(run_dir / "config.json");
    cfg.output.dir.clear();
    const Setup s = prepare(cfg);
    const int R = cfg.run.consensus_steps;
    const int L = s.arch.num_layers();

    std::ostringstream out;
    out << kDiagnosticsHeader << '\n';
    for (const auto kind : cfg.strategies()) {
        const std::string name = strategies::to_string(kind);
        std::ifstream tin(run_dir / "tensors" / (name + ".txt"));
        if (!tin) throw DataUnavailable("diagnose: no tensor dump for " + name + " (run with --dump-tensors)");
        const auto tensors = mixing::read_tensors(tin);
        const fs::path ckdir = run_dir / "checkpoints" / name;
        if (!fs::exists(ckdir)) throw DataUnavailable("diagnose: no checkpoints for " + name);

        std::vector<int> rounds;
        for (const auto& e : fs::directory_iterator(ckdir)) {
            const std::string f = e.path().filename().string();
            if (f.rfind("round_", 0) == 0) rounds.push_back(std::stoi(f.substr(6)));
        }
        std::sort(rounds.begin(), rounds.end());
        for (int round : rounds) {
            const auto params = read_checkpoint(ckdir / ("round_" + std::to_string(round) + ".txt"));
            const long iter = static_cast<long>(round) * R - 1;
            std::vector<diagnostics::PhiEstimate> phi;
            if (iter < 0 || tensors.empty()) {
                phi = diagnostics::uniform_phi(static_cast<int>(params.size()), L);
            } else {
                for (int p = 0; p < L; ++p) phi.push_back(diagnostics::estimate_phi(tensors, p, iter, horizon, true));
            }
            const auto center = diagnostics::centroid(params, phi);
            const double dis = diagnostics::network_disagreement(params, center);
            const double gn = diagnostics::centroid_grad_norm(s.arch, center, s.pooled);
            for (int p = 0; p < L; ++p) {
                const auto& w = phi[p].weights;
                out << name << ',' << round << ',' << iter << ',' << p << ',' << phi[p].horizon_used << ','
                    << fmt(phi[p].residual) << ',' << fmt(*std::min_element(w.begin(), w.end())) << ','
                    << fmt(*std::max_element(w.begin(), w.end())) << ',' << fmt(dis) << ',' << fmt(gn) << '\n';
            }
        }

        // Rank-one contraction of the backward products from the first step.
        if (log && !tensors.empty()) {
            const long i0 = tensors.front().iteration_index;
            const long avail = tensors.back().iteration_index - i0;
            const int hmax = static_cast<int>(std::min<long>(horizon, avail));
            for (int p = 0; p < L && hmax >= 6; ++p) {
                std::vector<double> hs, res;
                for (int h = 5; h <= hmax; ++h) {
                    const double r = diagnostics::rank_one_residual(diagnostics::backward_product(tensors, p, i0, i0 + h));
                    if (r > 0.0) {
                        hs.push_back(h);
                        res.push_back(r);
                    }
                }
                if (hs.size() < 2) {
                    *log << name << " layer " << p << ": residual vanished, already rank-one\n";
                    continue;
                }
                const auto fit = diagnostics::fit_geometric(hs, res);
                *log << name << " layer " << p << ": residual ~ " << fmt(fit.scale) << " * " << fmt(fit.ratio)
                     << "^H (R^2 = " << fmt(fit.r_squared) << ", H in [5, " << hmax << "])\n";
            }
        }
    }
    std::ofstream(run_dir / "diagnostics.csv") << out.str();
    return out.str();
}

}  // namespace drtdiff::experiment
