#include "drtdiff/strategies.hpp"

#include <cmath>

#include "drtdiff/error.hpp"
#include "drtdiff/parallel.hpp"
#include "drtdiff/rng.hpp"

namespace drtdiff::strategies {

StrategyKind parse_strategy(const std::string& name) {
    if (name == "classical" || name == "classical_diffusion") return StrategyKind::classical_diffusion;
    if (name == "drt" || name == "drt_diffusion") return StrategyKind::drt_diffusion;
    throw InvalidArgument("unknown strategy '" + name + "' (expected classical or drt)");
}

std::string to_string(StrategyKind k) {
    return k == StrategyKind::classical_diffusion ? "classical" : "drt";
}

std::vector<AgentState> make_agents(int num_agents, const nn::LayeredParams& initial, std::uint64_t master_seed) {
    std::vector<AgentState> out;
    out.reserve(num_agents);
    for (int k = 0; k < num_agents; ++k)
        out.push_back(AgentState{k, initial, derive_seed(master_seed, {0x6167656eULL, static_cast<std::uint64_t>(k)})});
    return out;
}

void RoundSpec::validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw InvalidArgument("round spec: step_size must be > 0");
    if (batch_size < 1) throw InvalidArgument("round spec: batch_size must be >= 1");
    if (local_steps < 0) throw InvalidArgument("round spec: local_steps must be >= 0 (0 = one epoch)");
    if (consensus_steps < 0) throw InvalidArgument("round spec: consensus_steps must be >= 0");
}

nn::LayeredParams adapt_step(const nn::Architecture& arch, const nn::LayeredParams& params, const nn::Batch& batch,
                             double mu, double* loss_out) {
    if (!(mu >= 0.0)) throw InvalidArgument("adapt_step: step size must be >= 0");
    auto lg = nn::loss_and_grad(arch, params, batch);
    nn::LayeredParams psi = params;
    nn::axpy(-mu, lg.grad, psi);
    if (loss_out) *loss_out = lg.loss;
    return psi;
}

namespace {

void require_uniform_shapes(std::span<const nn::LayeredParams> psis) {
    for (const auto& p : psis) {
        if (p.layers.size() != psis.front().layers.size())
            throw ContractViolation("combine: agents differ in layer count");
        for (std::size_t l = 0; l < p.layers.size(); ++l)
            if (p.layers[l].size() != psis.front().layers[l].size())
                throw ContractViolation("combine: agents differ in length of layer " + std::to_string(l));
    }
}

}  // namespace

std::vector<nn::LayeredParams> combine_with_tensor(std::span<const nn::LayeredParams> psis,
                                                   const mixing::MixingTensor& t, int threads) {
    const std::size_t K = psis.size();
    if (K == 0) return {};
    require_uniform_shapes(psis);
    const std::size_t L = psis.front().layers.size();
    if (t.per_layer.size() != L) throw ContractViolation("combine: tensor layer count does not match parameters");
    for (const auto& a : t.per_layer)
        if (a.rows() != K || a.cols() != K) throw ContractViolation("combine: tensor size does not match agent count");

    std::vector<nn::LayeredParams> out(K);
    parallel_for(K, threads, [&](std::size_t k) {
        nn::LayeredParams w;
        w.layers.resize(L);
        for (std::size_t p = 0; p < L; ++p) {
            auto& dst = w.layers[p];
            dst.assign(psis.front().layers[p].size(), 0.0);
            const Matrix& a = t.per_layer[p];
            for (std::size_t l = 0; l < K; ++l) {
                const double alk = a(l, k);
                if (alk == 0.0) continue;
                const auto& src = psis[l].layers[p];
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alk * src[i];
            }
        }
        out[k] = std::move(w);
    });
    return out;
}

std::vector<nn::LayeredParams> combine_classical(std::span<const nn::LayeredParams> psis, const Matrix& a,
                                                 int threads) {
    if (psis.empty()) return {};
    return combine_with_tensor(psis, mixing::constant_tensor(a, psis.front().num_layers(), 0), threads);
}

DrtCombineResult combine_drt(std::span<const nn::LayeredParams> psis, const topology::BaseWeights& base,
                             const topology::Topology& topo, const mixing::DrtConfig& cfg, long iteration,
                             int threads) {
    DrtCombineResult r;
    r.tensor = mixing::build_mixing_tensor(psis, base, topo, cfg, iteration, threads);
    r.params = combine_with_tensor(psis, r.tensor, threads);
    return r;
}

RoundTelemetry run_round(std::vector<AgentState>& states, const RoundContext& ctx) {
    if (!ctx.arch || !ctx.dataset || !ctx.topo || !ctx.base) throw InvalidArgument("run_round: incomplete context");
    ctx.spec.validate();
    const std::size_t K = states.size();
    if (static_cast<int>(K) != ctx.topo->num_agents() || ctx.assignments.size() != K)
        throw ContractViolation("run_round: agent count differs between states, topology and data assignments");

    RoundTelemetry tel;
    tel.agent_loss.assign(K, 0.0);

    // Adapt: each agent walks its own shuffled local batches.
    parallel_for(K, ctx.threads, [&](std::size_t k) {
        auto& st = states[k];
        const auto& local = ctx.assignments[k];
        if (local.empty()) return;
        const std::size_t per_epoch = (local.size() + ctx.spec.batch_size - 1) / ctx.spec.batch_size;
        const std::size_t steps = ctx.spec.local_steps > 0 ? static_cast<std::size_t>(ctx.spec.local_steps) : per_epoch;
        std::vector<data::IndexSet> order;
        double loss_sum = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            if (s % per_epoch == 0) {
                const auto epoch = static_cast<std::uint64_t>(s / per_epoch);
                order = data::batches(local, ctx.spec.batch_size,
                                      derive_seed(st.stream_seed, {static_cast<std::uint64_t>(ctx.round), epoch}));
            }
            const nn::Batch b = data::gather(*ctx.dataset, order[s % per_epoch]);
            double l = 0.0;
            st.params = adapt_step(*ctx.arch, st.params, b, ctx.spec.step_size, &l);
            loss_sum += l;
        }
        tel.agent_loss[k] = loss_sum / static_cast<double>(steps);
    });
    for (std::size_t k = 0; k < K; ++k)
        if (!nn::all_finite(states[k].params))
            throw NumericalFailure("run_round: agent " + std::to_string(k) + " diverged in round " +
                                   std::to_string(ctx.round));

    // Combine: R synchronous steps over immutable snapshots.
    const int L = ctx.arch->num_layers();
    std::vector<nn::LayeredParams> snapshot(K);
    mixing::MixingTensor frozen;
    for (int r = 0; r < ctx.spec.consensus_steps; ++r) {
        for (std::size_t k = 0; k < K; ++k) snapshot[k] = std::move(states[k].params);
        const long iter = ctx.first_iteration + r;
        mixing::MixingTensor tensor;
        if (ctx.kind == StrategyKind::classical_diffusion) {
            tensor = mixing::constant_tensor(ctx.base->matrix, L, iter);
        } else if (ctx.freeze_weights_within_round && r > 0) {
            tensor = frozen;
            tensor.iteration_index = iter;
        } else {
            tensor = mixing::build_mixing_tensor(snapshot, *ctx.base, *ctx.topo, ctx.drt, iter, ctx.threads);
            if (ctx.freeze_weights_within_round) frozen = tensor;
        }
        auto next = combine_with_tensor(snapshot, tensor, ctx.threads);
        for (std::size_t k = 0; k < K; ++k) states[k].params = std::move(next[k]);
        if (ctx.record_tensors) tel.tensors.push_back(std::move(tensor));
    }
    return tel;
}

}  // namespace drtdiff::strategies
