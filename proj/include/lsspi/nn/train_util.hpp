#pragma once

#include <cstdint>
#include <thread>
#include <vector>

#include "lsspi/nn/param.hpp"

namespace lsspi::nn {

/// Mix a seed with loop counters into an independent per-sample stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t x = seed ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xbf58476d1ce4e5b9ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

/// Run `per_sample(model, index)` over every index, accumulating parameter
/// gradients and returning the summed loss. With n_threads > 1 the model is
/// cloned per thread and gradients are merged in thread order, so results
/// are identical to the sequential run up to floating-point associativity
/// of disjoint per-sample sums (each sample's gradient is computed once,
/// and merge order is fixed).
template <class Model, class PerSample>
double batched_grads(Model& model, const std::vector<int>& indices, int n_threads,
                     PerSample&& per_sample) {
    if (n_threads <= 1 || indices.size() < 4) {
        double loss = 0.0;
        for (int idx : indices) loss += per_sample(model, idx);
        return loss;
    }
    const int T = std::min<int>(n_threads, static_cast<int>(indices.size()));
    std::vector<Model> clones(static_cast<std::size_t>(T), model);
    for (auto& c : clones) zero_grads(c.params());
    std::vector<double> losses(T, 0.0);
    std::vector<std::thread> threads;
    const std::size_t chunk = (indices.size() + T - 1) / T;
    for (int t = 0; t < T; ++t) {
        threads.emplace_back([&, t]() {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(indices.size(), lo + chunk);
            double local = 0.0;
            for (std::size_t i = lo; i < hi; ++i) local += per_sample(clones[t], indices[i]);
            losses[t] = local;
        });
    }
    for (auto& th : threads) th.join();
    ParamList dst = model.params();
    double loss = 0.0;
    for (int t = 0; t < T; ++t) {
        ParamList src = clones[t].params();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->g += src[i]->g;
        loss += losses[t];
    }
    return loss;
}

/// Fisher-Yates shuffle driven by the project RNG.
inline std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

}  // namespace lsspi::nn
