#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "mixplane/mixture.hpp"
#include "mixplane/util.hpp"

namespace mixplane::ado {

struct AdoConfig {
    std::uint64_t fit_start_step = 1000;
    std::uint64_t refit_every = 1000;
    std::uint64_t subsample_every = 10;
    std::uint64_t discard_first = 500;
    // Defaults to 0.1 / K when unset.
    std::optional<double> p_min;
    double smoothing = 0.5;
    double credit_rate = 0.1;
    // Defaults to uniform when empty.
    std::vector<double> prior;
    std::uint64_t chunk_size = 1024;
    bool strict = false;
    std::size_t min_fit_points = 8;

    nlohmann::json to_json() const;
    static AdoConfig from_json(const nlohmann::json& j);
};

// L(n) = epsilon + beta * n^-alpha
struct DomainLaw {
    double epsilon = 0.0;
    double beta = 0.0;
    double alpha = 0.0;
    // Set when the history did not decrease and a flat law was substituted.
    bool fallback = false;

    double operator()(double n) const;
    bool operator==(const DomainLaw&) const = default;
};

struct LossPoint {
    double n = 0.0;
    double loss = 0.0;
};

// Least squares in log space over (epsilon, beta, alpha): a 50-point grid on
// epsilon in [0, 0.999 * min loss] with closed-form log-linear regression for
// (alpha, beta) at each candidate, then a golden-section refinement between
// the best candidate's neighbours. Needs at least `min_points` points.
DomainLaw fit_power_law(std::span<const LossPoint> history, std::size_t min_points = 8);

// -dL/dn = alpha * beta * n^(-alpha - 1). Throws for n < 1.
double learning_speed(const DomainLaw& law, double n);

struct StepRecord {
    std::uint64_t step = 0;
    // Cumulative samples after this step, divided evenly over the domains.
    double n = 0.0;
    std::vector<double> losses;
};

struct FitEvent {
    std::uint64_t step = 0;
    std::vector<std::uint64_t> point_steps;
    std::vector<DomainLaw> laws;
};

class AdoState {
public:
    AdoState(std::vector<MixtureKey> domains, AdoConfig config);

    // Appends one training step. step must be exactly step() + 1. Domains
    // absent from `losses` (nullopt) carry their previous loss forward.
    void record_step(std::uint64_t step, std::span<const std::optional<double>> losses, double samples);

    const std::vector<MixtureKey>& domains() const { return domains_; }
    const AdoConfig& config() const { return config_; }
    double p_min() const;
    std::uint64_t step() const { return step_; }
    double cumulative_samples() const { return cumulative_; }
    const std::vector<StepRecord>& history() const { return history_; }
    const std::vector<double>& pi() const { return pi_; }
    const std::vector<double>& pi_average() const { return pi_avg_; }
    const std::vector<double>& credit() const { return credit_; }
    const std::vector<double>& prior() const { return prior_; }
    const std::optional<std::vector<DomainLaw>>& laws() const { return laws_; }
    const std::vector<FitEvent>& fits() const { return fits_; }
    std::uint64_t carried_losses() const { return carried_; }

    // Steps whose losses feed the fit at `at_step`: after discard_first,
    // every subsample_every-th step.
    std::vector<const StepRecord*> fit_window(std::uint64_t at_step) const;

    MixtureSpec current_mixture() const;

    nlohmann::json to_json() const;
    static AdoState from_json(const nlohmann::json& j);

    // Test hooks: overwrite the fitted laws or the credit vector directly.
    void set_laws(std::vector<DomainLaw> laws) { laws_ = std::move(laws); }
    void set_credit(std::vector<double> credit) { credit_ = std::move(credit); }

private:
    friend void compute_pi(AdoState& state);

    void refit();

    std::vector<MixtureKey> domains_;
    AdoConfig config_;
    std::vector<double> prior_;
    std::uint64_t step_ = 0;
    double cumulative_ = 0.0;
    std::vector<StepRecord> history_;
    std::optional<std::vector<DomainLaw>> laws_;
    std::vector<double> credit_;
    std::vector<double> pi_;
    std::vector<double> pi_avg_;
    std::uint64_t pi_count_ = 0;
    std::vector<FitEvent> fits_;
    std::uint64_t carried_ = 0;
};

// Recomputes pi from laws, credit and prior, blends it with the running mean
// of past distributions, applies the floor, and folds it into that mean.
void compute_pi(AdoState& state);

// Clamps entries to at least p_min and rescales the others so the vector
// still sums to 1.
std::vector<double> apply_floor(std::vector<double> pi, double p_min);

//------------------------------------------------------------------------------

class AdoMixtureProvider : public MixtureProvider {
public:
    AdoMixtureProvider(std::vector<MixtureKey> domains, AdoConfig config)
        : state_(std::move(domains), std::move(config)) {}

    std::string algorithm() const override { return "ado"; }
    MixtureSpec current() const override { return state_.current_mixture(); }
    bool dynamic() const override { return true; }
    void on_feedback(std::uint64_t step, const std::vector<DomainFeedback>& losses) override;

    nlohmann::json state() const override { return state_.to_json(); }
    void restore(const nlohmann::json& state) override { state_ = AdoState::from_json(state); }

    const AdoState& ado() const { return state_; }

private:
    AdoState state_;
};

// Appends {"step","chunk_id","pi"} as one canonical JSON line.
void append_trajectory(const std::filesystem::path& log, std::uint64_t step, std::uint64_t chunk_id,
                       const MixtureSpec& pi);

}  // namespace mixplane::ado
