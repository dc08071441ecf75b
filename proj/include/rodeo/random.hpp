#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace rodeo {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Independent generator for (seed, stream). Streams with different ids never
/// share state, so work can be split per sample and merged in index order.
Rng make_stream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

/// Derive a child seed without constructing a generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_id) noexcept;

double standard_normal(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
std::size_t uniform_index(Rng& rng, std::size_t n);

Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n);
Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols);
Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi);

}  // namespace rodeo
