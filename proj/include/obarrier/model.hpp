#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "obarrier/noise.hpp"
#include "obarrier/polynomial.hpp"
#include "obarrier/semialgebraic.hpp"

namespace obarrier {

enum class Mode { Safety, ReachAvoid };

/// How a trajectory leaving X is accounted for.
enum class ExitPolicy { Unsafe, Safe };

struct Box {
    std::vector<double> low, high;
    std::size_t dims() const noexcept { return low.size(); }
    bool contains(std::span<const double> x) const;
};

struct SystemModel {
    std::string name;
    std::size_t state_dim = 0;
    std::vector<Polynomial> dynamics;  // closed loop, (x, w)
    NoiseSpec noise;
    SemialgebraicSet X, I, U;
    std::optional<SemialgebraicSet> T;
    Mode mode = Mode::Safety;
    bool asserts_absorption = false;
    ExitPolicy exit = ExitPolicy::Unsafe;
    Box bounds;       // bounding box of X
    Box init_bounds;  // bounding box of I

    std::size_t noise_dim() const noexcept { return noise.dims(); }
    /// I ∩ X: initial states that are actually inside the state space.
    SemialgebraicSet effective_init() const { return I.intersect(X); }
    /// F(x, w) into out.
    void step(std::span<const double> x, std::span<const double> w, std::span<double> out) const;
};

/// Bounding box of a set by coarse-to-fine scanning. Throws SchemaError when
/// the set looks empty or unbounded at the scan radius.
Box derive_bounding_box(const SemialgebraicSet& s, double max_radius = 1e3);

/// Outer box from the constraints of the form a + b x_i >= 0, hulled over
/// disjuncts. Empty when some axis of some disjunct is left unbounded.
std::optional<Box> linear_box_hull(const SemialgebraicSet& s);

/// True when single-variable linear atoms already put a and b apart on some axis.
bool hulls_separated(const SemialgebraicSet& a, const SemialgebraicSet& b);

/// Sampled disjointness check; throws WellPosednessError on a hit.
void check_disjoint(const SemialgebraicSet& a, const Box& a_box, const SemialgebraicSet& u,
                    const std::string& what, std::size_t samples = 10000, std::uint64_t seed = 1);

// JSON (de)serialization
Polynomial poly_from_json(const nlohmann::json& j, std::size_t nx, std::size_t nw);
nlohmann::json poly_to_json(const Polynomial& p);
SemialgebraicSet set_from_json(const nlohmann::json& j, std::size_t nx);
nlohmann::json set_to_json(const SemialgebraicSet& s);

SystemModel model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const SystemModel& m);
SystemModel load_model(const std::filesystem::path& path);

}  // namespace obarrier
