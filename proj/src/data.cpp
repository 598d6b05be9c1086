#include "drtdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "drtdiff/error.hpp"
#include "drtdiff/rng.hpp"

namespace drtdiff::data {

void Dataset::validate() const {
    if (num_classes < 1) throw InvalidArgument("dataset: num_classes must be >= 1");
    if (inputs.rows() != labels.size()) throw InvalidArgument("dataset: inputs and labels differ in length");
    std::vector<bool> seen(num_classes, false);
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw InvalidArgument("dataset: label " + std::to_string(y) + " out of range");
        seen[y] = true;
    }
    for (int c = 0; c < num_classes; ++c)
        if (!seen[c]) throw InvalidArgument("dataset: class " + std::to_string(c) + " has no samples");
}

BlobModel make_blob_model(int num_classes, int dim, double spread, std::uint64_t seed) {
    if (num_classes < 2) throw InvalidArgument("blobs: need at least 2 classes");
    if (dim < 2) throw InvalidArgument("blobs: need dim >= 2");
    if (!(spread >= 0.0) || !std::isfinite(spread)) throw InvalidArgument("blobs: spread must be finite and >= 0");

    Rng rng(derive_seed(seed, {0x6d65616eULL}));
    std::normal_distribution<double> g(0.0, 1.0);
    BlobModel m{Matrix(num_classes, dim), spread};
    for (int c = 0; c < num_classes; ++c) {
        double n = 0.0;
        while (n < 1e-12) {
            n = 0.0;
            for (int j = 0; j < dim; ++j) {
                m.means(c, j) = g(rng);
                n += m.means(c, j) * m.means(c, j);
            }
        }
        n = std::sqrt(n);
        for (int j = 0; j < dim; ++j) m.means(c, j) /= n;
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < num_classes; ++a)
        for (int b = a + 1; b < num_classes; ++b) {
            double s = 0.0;
            for (int j = 0; j < dim; ++j) {
                const double d = m.means(a, j) - m.means(b, j);
                s += d * d;
            }
            min_dist = std::min(min_dist, std::sqrt(s));
        }
    if (!(min_dist > 1e-9)) throw InvalidArgument("blobs: class means coincide; choose another seed or a larger dim");
    const double required = 4.0 * spread;
    if (min_dist < required) {
        const double scale = required / min_dist;
        for (auto& v : m.means.data()) v *= scale;
    }
    return m;
}

Dataset sample_blobs(const BlobModel& model, int per_class, std::uint64_t seed) {
    if (per_class < 1) throw InvalidArgument("blobs: per_class must be >= 1");
    const int C = static_cast<int>(model.means.rows());
    const int d = static_cast<int>(model.means.cols());
    Rng rng(derive_seed(seed, {0x73616d70ULL}));
    std::normal_distribution<double> g(0.0, 1.0);
    Dataset ds{Matrix(static_cast<std::size_t>(C) * per_class, d), {}, C};
    ds.labels.reserve(ds.inputs.rows());
    std::size_t row = 0;
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < per_class; ++i, ++row) {
            for (int j = 0; j < d; ++j) ds.inputs(row, j) = model.means(c, j) + model.spread * g(rng);
            ds.labels.push_back(c);
        }
    return ds;
}

Dataset make_gaussian_blobs(int num_classes, int dim, int per_class, double spread, std::uint64_t seed) {
    return sample_blobs(make_blob_model(num_classes, dim, spread, seed), per_class, seed);
}

namespace {

int draw_in(Rng& rng, IntRange r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(rng); }

std::vector<IndexSet> partition_iid(const Dataset& ds, const PartitionSpec& spec, Rng& rng) {
    const std::size_t M = ds.size();
    const auto K = static_cast<std::size_t>(spec.num_agents);
    if (M < K) throw PartitionInfeasible("partition: " + std::to_string(M) + " samples cannot cover " +
                                         std::to_string(K) + " agents");
    IndexSet all(M);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<IndexSet> out(K);
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t lo = M * k / K, hi = M * (k + 1) / K;
        out[k].assign(all.begin() + static_cast<std::ptrdiff_t>(lo), all.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return out;
}

}  // namespace

std::vector<IndexSet> partition(const Dataset& ds, const PartitionSpec& spec) {
    if (spec.num_agents < 1) throw PartitionInfeasible("partition: num_agents must be >= 1");
    Rng rng(derive_seed(spec.seed, {0x70617274ULL}));
    if (spec.iid) return partition_iid(ds, spec, rng);

    const auto& cr = spec.classes_per_agent;
    const auto& sr = spec.samples_per_agent;
    if (cr.lo < 1 || cr.lo > cr.hi || cr.hi > ds.num_classes)
        throw PartitionInfeasible("partition: classes_per_agent range [" + std::to_string(cr.lo) + ", " +
                                  std::to_string(cr.hi) + "] must satisfy 1 <= lo <= hi <= " +
                                  std::to_string(ds.num_classes));
    if (sr.lo < 1 || sr.lo > sr.hi)
        throw PartitionInfeasible("partition: samples_per_agent range must satisfy 1 <= lo <= hi");
    if (sr.lo < cr.hi)
        throw PartitionInfeasible("partition: samples_per_agent lower bound " + std::to_string(sr.lo) +
                                  " is below the largest class count " + std::to_string(cr.hi));
    const std::size_t worst_total = static_cast<std::size_t>(spec.num_agents) * static_cast<std::size_t>(sr.hi);
    if (worst_total > ds.size())
        throw PartitionInfeasible("partition: up to " + std::to_string(worst_total) +
                                  " samples requested but dataset holds " + std::to_string(ds.size()));

    // Remaining pool per class, each shuffled once.
    std::vector<IndexSet> pool(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) pool[ds.labels[i]].push_back(i);
    for (auto& p : pool) std::shuffle(p.begin(), p.end(), rng);

    std::vector<IndexSet> out(spec.num_agents);
    for (int k = 0; k < spec.num_agents; ++k) {
        const int n_classes = draw_in(rng, cr);
        std::vector<int> classes;
        for (int c = 0; c < ds.num_classes; ++c)
            if (!pool[c].empty()) classes.push_back(c);
        if (classes.size() < static_cast<std::size_t>(n_classes))
            throw PartitionInfeasible("partition: agent " + std::to_string(k) + " needs " + std::to_string(n_classes) +
                                      " classes but only " + std::to_string(classes.size()) + " still have samples");
        std::shuffle(classes.begin(), classes.end(), rng);
        std::vector<int> chosen(classes.begin(), classes.begin() + n_classes);
        std::sort(chosen.begin(), chosen.end());
        const int n_samples = draw_in(rng, sr);

        // One guaranteed sample per chosen class, the rest from the pooled remainder.
        IndexSet picked;
        IndexSet candidates;
        for (int c : chosen) {
            picked.push_back(pool[c].front());
            candidates.insert(candidates.end(), pool[c].begin() + 1, pool[c].end());
        }
        const std::size_t extra = static_cast<std::size_t>(n_samples) - picked.size();
        if (candidates.size() < extra)
            throw PartitionInfeasible("partition: agent " + std::to_string(k) + " needs " + std::to_string(n_samples) +
                                      " samples but only " + std::to_string(candidates.size() + picked.size()) +
                                      " remain in its " + std::to_string(n_classes) +
                                      " classes (increase per-class samples or lower samples_per_agent)");
        std::shuffle(candidates.begin(), candidates.end(), rng);
        candidates.resize(extra);
        candidates.insert(candidates.end(), picked.begin(), picked.end());
        std::sort(candidates.begin(), candidates.end());
        for (int c : chosen) {
            auto& p = pool[c];
            p.erase(std::remove_if(p.begin(), p.end(),
                                   [&](std::size_t i) {
                                       return std::binary_search(candidates.begin(), candidates.end(), i);
                                   }),
                    p.end());
        }
        out[k] = std::move(candidates);
    }
    return out;
}

std::vector<IndexSet> batches(std::span<const std::size_t> indices, std::size_t batch_size, std::uint64_t epoch_seed) {
    if (batch_size < 1) throw InvalidArgument("batches: batch_size must be >= 1");
    IndexSet order(indices.begin(), indices.end());
    Rng rng(derive_seed(epoch_seed, {0x62617463ULL}));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<IndexSet> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    return out;
}

nn::Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
    nn::Batch b{Matrix(indices.size(), ds.dim()), {}};
    b.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = ds.inputs.row(indices[r]);
        std::copy(src.begin(), src.end(), b.inputs.row(r).begin());
        b.labels.push_back(ds.labels[indices[r]]);
    }
    return b;
}

nn::Batch as_batch(const Dataset& ds) { return nn::Batch{ds.inputs, ds.labels}; }

void write_csv(std::ostream& os, const Dataset& ds) {
    const auto old = os.precision(17);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        os << ds.labels[i];
        for (double v : ds.inputs.row(i)) os << ',' << v;
        os << '\n';
    }
    os.precision(old);
}

Dataset read_csv(std::istream& is) {
    std::vector<int> labels;
    std::vector<double> values;
    std::size_t dim = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 2) throw SchemaMismatch("dataset csv line " + std::to_string(lineno) + ": need label and features");
        if (dim == 0) dim = cells.size() - 1;
        if (cells.size() - 1 != dim)
            throw SchemaMismatch("dataset csv line " + std::to_string(lineno) + ": inconsistent feature count");
        try {
            labels.push_back(std::stoi(cells[0]));
            for (std::size_t j = 1; j < cells.size(); ++j) values.push_back(std::stod(cells[j]));
        } catch (const std::exception&) {
            throw SchemaMismatch("dataset csv line " + std::to_string(lineno) + ": non-numeric field");
        }
    }
    if (labels.empty()) throw SchemaMismatch("dataset csv: no rows");
    Dataset ds{Matrix(labels.size(), dim), std::move(labels), 0};
    ds.inputs.data() = std::move(values);
    for (int y : ds.labels) {
        if (y < 0) throw SchemaMismatch("dataset csv: negative label");
        ds.num_classes = std::max(ds.num_classes, y + 1);
    }
    return ds;
}

}  // namespace drtdiff::data
