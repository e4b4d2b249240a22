#include "mixplane/ado.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace mixplane::ado {

using nlohmann::json;

json AdoConfig::to_json() const {
    json j = {{"fit_start_step", fit_start_step}, {"refit_every", refit_every},
              {"subsample_every", subsample_every}, {"discard_first", discard_first},
              {"smoothing", smoothing},           {"credit_rate", credit_rate},
              {"prior", prior},                   {"chunk_size", chunk_size},
              {"strict", strict},                 {"min_fit_points", min_fit_points}};
    j["p_min"] = p_min ? json(*p_min) : json();
    return j;
}

AdoConfig AdoConfig::from_json(const json& j) {
    AdoConfig c;
    c.fit_start_step = j.value("fit_start_step", c.fit_start_step);
    c.refit_every = j.value("refit_every", c.refit_every);
    c.subsample_every = j.value("subsample_every", c.subsample_every);
    c.discard_first = j.value("discard_first", c.discard_first);
    c.smoothing = j.value("smoothing", c.smoothing);
    c.credit_rate = j.value("credit_rate", c.credit_rate);
    c.prior = j.value("prior", c.prior);
    c.chunk_size = j.value("chunk_size", c.chunk_size);
    c.strict = j.value("strict", c.strict);
    c.min_fit_points = j.value("min_fit_points", c.min_fit_points);
    if (j.contains("p_min") && !j["p_min"].is_null()) {
        c.p_min = j["p_min"].get<double>();
    }
    return c;
}

double DomainLaw::operator()(double n) const { return epsilon + beta * std::pow(n, -alpha); }

//------------------------------------------------------------------------------
// Fitting

namespace {

struct Regression {
    double sse = std::numeric_limits<double>::infinity();
    double alpha = 0.0;
    double beta = 0.0;
};

// log(loss - eps) = log(beta) - alpha * log(n), ordinary least squares.
Regression regress(std::span<const LossPoint> pts, double eps) {
    const double m = static_cast<double>(pts.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : pts) {
        const double d = p.loss - eps;
        if (!(d > 0)) {
            return {};
        }
        const double x = std::log(p.n);
        const double y = std::log(d);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double den = m * sxx - sx * sx;
    if (!(std::abs(den) > 0)) {
        return {};
    }
    const double slope = (m * sxy - sx * sy) / den;
    const double intercept = (sy - slope * sx) / m;
    Regression r;
    r.alpha = -slope;
    r.beta = std::exp(intercept);
    // Candidates are scored on the log of the predicted loss rather than on
    // log(loss - eps): the latter blows noise up as eps nears the asymptote
    // and so drifts towards eps = 0 on noisy data.
    r.sse = 0;
    for (const auto& p : pts) {
        const double e = std::log(eps + r.beta * std::pow(p.n, -r.alpha)) - std::log(p.loss);
        r.sse += e * e;
    }
    return r;
}

DomainLaw fallback_law(std::span<const LossPoint> pts) {
    double min_loss = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) {
        min_loss = std::min(min_loss, p.loss);
    }
    DomainLaw law;
    law.epsilon = std::max(min_loss, 0.0);
    law.alpha = 1e-6;
    law.beta = std::max(pts.front().loss - law.epsilon, 1e-12) * std::pow(pts.front().n, law.alpha);
    law.fallback = true;
    return law;
}

}  // namespace

DomainLaw fit_power_law(std::span<const LossPoint> history, std::size_t min_points) {
    std::vector<LossPoint> pts;
    for (const auto& p : history) {
        if (std::isfinite(p.loss) && std::isfinite(p.n)) {
            pts.push_back(p);
        }
    }
    if (pts.size() < std::max<std::size_t>(min_points, 2)) {
        throw Error("fit_power_law: need at least " + std::to_string(min_points) + " points, got " +
                    std::to_string(pts.size()));
    }
    for (const auto& p : pts) {
        if (p.n < 1) {
            throw Error("fit_power_law: sample counts must be >= 1");
        }
    }
    double min_loss = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) {
        min_loss = std::min(min_loss, p.loss);
    }
    if (!(min_loss > 0)) {
        return fallback_law(pts);
    }

    // Candidates are log-spaced in the gap (min loss - eps), from eps = 0 to
    // eps = 0.999 * min loss, so they are densest near the asymptote.
    constexpr int grid_size = 50;
    std::vector<double> grid;
    for (int i = 0; i < grid_size; ++i) {
        const double gap = std::pow(1e-3, static_cast<double>(i) / (grid_size - 1));
        grid.push_back(min_loss * (1 - gap));
    }

    std::size_t best = 0;
    Regression best_fit = regress(pts, grid[0]);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        Regression r = regress(pts, grid[i]);
        if (r.sse < best_fit.sse) {
            best = i;
            best_fit = r;
        }
    }
    double best_eps = grid[best];

    // Golden-section refinement between the neighbouring candidates.
    double a = grid[best > 0 ? best - 1 : 0];
    double b = grid[std::min(best + 1, grid.size() - 1)];
    const double phi = (std::sqrt(5.0) - 1) / 2;
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    Regression rc = regress(pts, c);
    Regression rd = regress(pts, d);
    for (int it = 0; it < 100 && (b - a) > 1e-12 * std::max(1.0, b); ++it) {
        if (rc.sse < rd.sse) {
            b = d;
            d = c;
            rd = rc;
            c = b - phi * (b - a);
            rc = regress(pts, c);
        } else {
            a = c;
            c = d;
            rc = rd;
            d = a + phi * (b - a);
            rd = regress(pts, d);
        }
    }
    for (const auto& [eps, r] : {std::pair{c, rc}, std::pair{d, rd}}) {
        if (r.sse < best_fit.sse) {
            best_fit = r;
            best_eps = eps;
        }
    }

    if (!std::isfinite(best_fit.sse) || !(best_fit.alpha > 0) || !(best_fit.beta > 0)) {
        return fallback_law(pts);
    }
    return {best_eps, best_fit.beta, best_fit.alpha, false};
}

double learning_speed(const DomainLaw& law, double n) {
    if (!(n >= 1)) {
        throw Error("learning_speed: n must be >= 1");
    }
    return std::max(0.0, law.alpha * law.beta * std::pow(n, -law.alpha - 1));
}

//------------------------------------------------------------------------------
// AdoState

AdoState::AdoState(std::vector<MixtureKey> domains, AdoConfig config)
    : domains_(std::move(domains)), config_(std::move(config)) {
    const std::size_t k = domains_.size();
    if (k == 0) {
        throw Error("ado: no domains");
    }
    if (std::set<MixtureKey>(domains_.begin(), domains_.end()).size() != k) {
        throw Error("ado: duplicate domain key");
    }
    prior_ = config_.prior.empty() ? std::vector<double>(k, 1.0 / static_cast<double>(k)) : config_.prior;
    if (prior_.size() != k) {
        throw Error("ado: prior has " + std::to_string(prior_.size()) + " entries for " + std::to_string(k) +
                    " domains");
    }
    if (std::any_of(prior_.begin(), prior_.end(), [](double v) { return !(v >= 0); }) ||
        std::abs(std::accumulate(prior_.begin(), prior_.end(), 0.0) - 1.0) > 1e-9) {
        throw Error("ado: prior must be a distribution");
    }
    if (!(p_min() >= 0) || p_min() * static_cast<double>(k) >= 1.0) {
        throw Error("ado: p_min * K must be < 1");
    }
    if (!(config_.smoothing >= 0 && config_.smoothing < 1)) {
        throw Error("ado: smoothing must be in [0, 1)");
    }
    if (!(config_.credit_rate > 0 && config_.credit_rate <= 1)) {
        throw Error("ado: credit rate must be in (0, 1]");
    }
    if (config_.refit_every == 0 || config_.subsample_every == 0) {
        throw Error("ado: refit_every and subsample_every must be positive");
    }
    credit_ = prior_;
    pi_ = apply_floor(prior_, p_min());
    pi_avg_ = pi_;
}

double AdoState::p_min() const {
    return config_.p_min.value_or(0.1 / static_cast<double>(domains_.size()));
}

void AdoState::record_step(std::uint64_t step, std::span<const std::optional<double>> losses, double samples) {
    if (step != step_ + 1) {
        throw Error("ado: expected step " + std::to_string(step_ + 1) + ", got " + std::to_string(step));
    }
    if (losses.size() != domains_.size()) {
        throw Error("ado: loss vector size does not match the domain count");
    }
    if (!(samples >= 0)) {
        throw Error("ado: negative sample count");
    }
    const double rate = config_.credit_rate;
    for (std::size_t k = 0; k < credit_.size(); ++k) {
        credit_[k] = (1 - rate) * credit_[k] + rate * pi_[k];
    }

    StepRecord rec;
    rec.step = step;
    cumulative_ += samples;
    rec.n = cumulative_ / static_cast<double>(domains_.size());
    rec.losses.resize(domains_.size());
    for (std::size_t k = 0; k < domains_.size(); ++k) {
        if (losses[k]) {
            rec.losses[k] = *losses[k];
        } else {
            rec.losses[k] = history_.empty() ? std::numeric_limits<double>::quiet_NaN() : history_.back().losses[k];
            ++carried_;
        }
    }
    history_.push_back(std::move(rec));
    step_ = step;

    if (step >= config_.fit_start_step && step % config_.refit_every == 0) {
        refit();
    }
    compute_pi(*this);
}

std::vector<const StepRecord*> AdoState::fit_window(std::uint64_t at_step) const {
    std::vector<const StepRecord*> out;
    for (const auto& rec : history_) {
        if (rec.step > at_step) {
            break;
        }
        if (rec.step > config_.discard_first && rec.step % config_.subsample_every == 0) {
            out.push_back(&rec);
        }
    }
    return out;
}

void AdoState::refit() {
    const auto window = fit_window(step_);
    FitEvent ev;
    ev.step = step_;
    for (const auto* rec : window) {
        ev.point_steps.push_back(rec->step);
    }
    std::vector<DomainLaw> laws;
    for (std::size_t k = 0; k < domains_.size(); ++k) {
        std::vector<LossPoint> pts;
        for (const auto* rec : window) {
            if (rec->n >= 1) {
                pts.push_back({rec->n, rec->losses[k]});
            }
        }
        const auto finite = std::count_if(pts.begin(), pts.end(), [](const LossPoint& p) {
            return std::isfinite(p.loss);
        });
        if (static_cast<std::size_t>(finite) < std::max<std::size_t>(config_.min_fit_points, 2)) {
            // Not enough data yet; keep whatever law this domain had.
            if (!laws_) {
                return;
            }
            laws.push_back((*laws_)[k]);
            continue;
        }
        laws.push_back(fit_power_law(pts, config_.min_fit_points));
    }
    ev.laws = laws;
    laws_ = std::move(laws);
    fits_.push_back(std::move(ev));
}

std::vector<double> apply_floor(std::vector<double> pi, double p_min) {
    const std::size_t k = pi.size();
    std::vector<bool> floored(k, false);
    for (;;) {
        double fixed = 0, free = 0;
        for (std::size_t i = 0; i < k; ++i) {
            if (floored[i]) {
                fixed += p_min;
            } else {
                free += pi[i];
            }
        }
        const double budget = 1.0 - fixed;
        bool changed = false;
        for (std::size_t i = 0; i < k; ++i) {
            if (floored[i]) {
                pi[i] = p_min;
            } else {
                pi[i] = free > 0 ? pi[i] * budget / free : 0.0;
            }
        }
        if (!(free > 0)) {
            // Everything left is zero: spread the budget evenly.
            const auto open = std::count(floored.begin(), floored.end(), false);
            for (std::size_t i = 0; i < k; ++i) {
                if (!floored[i]) {
                    pi[i] = budget / static_cast<double>(open);
                }
            }
        }
        for (std::size_t i = 0; i < k; ++i) {
            if (!floored[i] && pi[i] < p_min) {
                floored[i] = true;
                changed = true;
            }
        }
        if (!changed) {
            return pi;
        }
    }
}

void compute_pi(AdoState& s) {
    const std::size_t k = s.domains_.size();
    std::vector<double> pi;
    double total = 0;
    std::vector<double> score(k, 0.0);
    if (s.laws_) {
        const double n = std::max(1.0, s.cumulative_ / static_cast<double>(k));
        for (std::size_t i = 0; i < k; ++i) {
            score[i] = s.prior_[i] * s.credit_[i] * learning_speed((*s.laws_)[i], n);
            total += score[i];
        }
    }
    if (!(total > 0) || !std::isfinite(total)) {
        pi = apply_floor(s.prior_, s.p_min());
    } else {
        const double sm = s.config_.smoothing;
        pi.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            pi[i] = (1 - sm) * score[i] / total + sm * s.pi_avg_[i];
        }
        pi = apply_floor(std::move(pi), s.p_min());
    }
    const double c = static_cast<double>(s.pi_count_);
    for (std::size_t i = 0; i < k; ++i) {
        s.pi_avg_[i] = (s.pi_avg_[i] * c + pi[i]) / (c + 1);
    }
    ++s.pi_count_;
    s.pi_ = std::move(pi);
}

MixtureSpec AdoState::current_mixture() const {
    std::vector<std::pair<MixtureKey, double>> weights;
    for (std::size_t i = 0; i < domains_.size(); ++i) {
        weights.emplace_back(domains_[i], pi_[i]);
    }
    // pi sums to 1 up to rounding; renormalize so the spec check passes.
    double sum = 0;
    for (const auto& [key, w] : weights) {
        sum += w;
    }
    for (auto& [key, w] : weights) {
        w /= sum;
    }
    return MixtureSpec::make(std::move(weights), config_.chunk_size, config_.strict);
}

namespace {

json law_json(const DomainLaw& l) {
    return {{"epsilon", l.epsilon}, {"beta", l.beta}, {"alpha", l.alpha}, {"fallback", l.fallback}};
}

DomainLaw law_from(const json& j) {
    return {j.at("epsilon").get<double>(), j.at("beta").get<double>(), j.at("alpha").get<double>(),
            j.at("fallback").get<bool>()};
}

// NaN is not representable in JSON; carried-forward gaps before the first
// real loss are stored as null.
json loss_json(double v) { return std::isfinite(v) ? json(v) : json(); }
double loss_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

json AdoState::to_json() const {
    json domains = json::array();
    for (const auto& d : domains_) {
        domains.push_back(mixplane::to_json(d));
    }
    json history = json::array();
    for (const auto& rec : history_) {
        json losses = json::array();
        for (double v : rec.losses) {
            losses.push_back(loss_json(v));
        }
        history.push_back({rec.step, rec.n, std::move(losses)});
    }
    json laws;
    if (laws_) {
        laws = json::array();
        for (const auto& l : *laws_) {
            laws.push_back(law_json(l));
        }
    }
    json fits = json::array();
    for (const auto& f : fits_) {
        json fl = json::array();
        for (const auto& l : f.laws) {
            fl.push_back(law_json(l));
        }
        fits.push_back({{"step", f.step}, {"point_steps", f.point_steps}, {"laws", std::move(fl)}});
    }
    return {{"domains", std::move(domains)},
            {"config", config_.to_json()},
            {"step", step_},
            {"cumulative", cumulative_},
            {"history", std::move(history)},
            {"laws", std::move(laws)},
            {"credit", credit_},
            {"pi", pi_},
            {"pi_avg", pi_avg_},
            {"pi_count", pi_count_},
            {"fits", std::move(fits)},
            {"carried", carried_}};
}

AdoState AdoState::from_json(const json& j) {
    std::vector<MixtureKey> domains;
    for (const auto& d : j.at("domains")) {
        domains.push_back(key_from_json(d));
    }
    AdoState s(std::move(domains), AdoConfig::from_json(j.at("config")));
    s.step_ = j.at("step").get<std::uint64_t>();
    s.cumulative_ = j.at("cumulative").get<double>();
    for (const auto& h : j.at("history")) {
        StepRecord rec;
        rec.step = h[0].get<std::uint64_t>();
        rec.n = h[1].get<double>();
        for (const auto& v : h[2]) {
            rec.losses.push_back(loss_from(v));
        }
        s.history_.push_back(std::move(rec));
    }
    if (!j.at("laws").is_null()) {
        std::vector<DomainLaw> laws;
        for (const auto& l : j.at("laws")) {
            laws.push_back(law_from(l));
        }
        s.laws_ = std::move(laws);
    }
    s.credit_ = j.at("credit").get<std::vector<double>>();
    s.pi_ = j.at("pi").get<std::vector<double>>();
    s.pi_avg_ = j.at("pi_avg").get<std::vector<double>>();
    s.pi_count_ = j.at("pi_count").get<std::uint64_t>();
    for (const auto& f : j.at("fits")) {
        FitEvent ev;
        ev.step = f.at("step").get<std::uint64_t>();
        ev.point_steps = f.at("point_steps").get<std::vector<std::uint64_t>>();
        for (const auto& l : f.at("laws")) {
            ev.laws.push_back(law_from(l));
        }
        s.fits_.push_back(std::move(ev));
    }
    s.carried_ = j.at("carried").get<std::uint64_t>();
    const std::size_t k = s.domains_.size();
    if (s.credit_.size() != k || s.pi_.size() != k || s.pi_avg_.size() != k) {
        throw Error("ado: state vectors do not match the domain count");
    }
    return s;
}

//------------------------------------------------------------------------------

void AdoMixtureProvider::on_feedback(std::uint64_t step, const std::vector<DomainFeedback>& losses) {
    const auto& domains = state_.domains();
    std::vector<std::optional<double>> per(domains.size());
    double tokens = 0;
    for (const auto& fb : losses) {
        auto it = std::find(domains.begin(), domains.end(), fb.key);
        if (it == domains.end()) {
            throw QueryError("feedback for unknown domain '" + fb.key.str() + "'");
        }
        tokens += static_cast<double>(fb.tokens);
        if (fb.tokens > 0) {
            per[static_cast<std::size_t>(it - domains.begin())] = fb.loss_sum / static_cast<double>(fb.tokens);
        }
    }
    state_.record_step(step, per, tokens);
}

void append_trajectory(const std::filesystem::path& log, std::uint64_t step, std::uint64_t chunk_id,
                       const MixtureSpec& pi) {
    json weights = json::array();
    for (const auto& [key, w] : pi.weights) {
        weights.push_back({{"key", key.str()}, {"weight", w}});
    }
    std::ofstream out(log, std::ios::app);
    if (!out) {
        throw IoError("cannot append to " + log.string());
    }
    out << json{{"step", step}, {"chunk_id", chunk_id}, {"pi", std::move(weights)}}.dump() << '\n';
}

}  // namespace mixplane::ado
