#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drtdiff/data.hpp"
#include "drtdiff/mixing.hpp"
#include "drtdiff/nn.hpp"
#include "drtdiff/topology.hpp"

namespace drtdiff::strategies {

enum class StrategyKind { classical_diffusion, drt_diffusion };

/// Accepts "classical" / "classical_diffusion" and "drt" / "drt_diffusion".
StrategyKind parse_strategy(const std::string& name);
/// Short name used in CSV output: "classical" or "drt".
std::string to_string(StrategyKind k);

struct AgentState {
    int agent_id = 0;
    nn::LayeredParams params;
    std::uint64_t stream_seed = 0;  ///< per-agent stream; batch orders derive from (stream_seed, round, epoch)
};

/// K agents sharing `initial`, each with its own stream derived from the master seed.
std::vector<AgentState> make_agents(int num_agents, const nn::LayeredParams& initial, std::uint64_t master_seed);

struct RoundSpec {
    double step_size = 0.05;
    std::size_t batch_size = 16;
    int local_steps = 0;  ///< 0 means one pass over the local data
    int consensus_steps = 3;

    void validate() const;
};

/// psi = params - mu * grad(params; batch). Writes the batch loss to `loss_out` if given.
nn::LayeredParams adapt_step(const nn::Architecture& arch, const nn::LayeredParams& params, const nn::Batch& batch,
                             double mu, double* loss_out = nullptr);

/// w_k = sum_l a_lk psi_l with one static matrix for every layer.
std::vector<nn::LayeredParams> combine_classical(std::span<const nn::LayeredParams> psis, const Matrix& a,
                                                 int threads = 1);

/// w_k^(p) = sum_l a_lk^(p) psi_l^(p), layer-specific columns.
std::vector<nn::LayeredParams> combine_with_tensor(std::span<const nn::LayeredParams> psis,
                                                   const mixing::MixingTensor& t, int threads = 1);

struct DrtCombineResult {
    std::vector<nn::LayeredParams> params;
    mixing::MixingTensor tensor;
};

/// Builds the DRT tensor from the psi snapshot, then combines with it.
DrtCombineResult combine_drt(std::span<const nn::LayeredParams> psis, const topology::BaseWeights& base,
                             const topology::Topology& topo, const mixing::DrtConfig& cfg, long iteration,
                             int threads = 1);

struct RoundContext {
    const nn::Architecture* arch = nullptr;
    const data::Dataset* dataset = nullptr;
    std::span<const data::IndexSet> assignments;
    const topology::Topology* topo = nullptr;
    const topology::BaseWeights* base = nullptr;
    mixing::DrtConfig drt;
    RoundSpec spec;
    StrategyKind kind = StrategyKind::classical_diffusion;
    int round = 0;
    long first_iteration = 0;  ///< iteration index given to this round's first combination step
    int threads = 1;
    bool freeze_weights_within_round = false;  ///< DRT: reuse the first step's tensor for all R steps
    bool record_tensors = false;
};

struct RoundTelemetry {
    std::vector<double> agent_loss;  ///< mean minibatch loss over each agent's local steps
    std::vector<mixing::MixingTensor> tensors;  ///< one per consensus step when recorded
};

/// Local steps on every agent (parallel across agents), then R combination
/// steps. DRT rebuilds its tensor from the current iterates at every step
/// unless frozen. Classical records its static matrix as a constant tensor.
RoundTelemetry run_round(std::vector<AgentState>& states, const RoundContext& ctx);

}  // namespace drtdiff::strategies
