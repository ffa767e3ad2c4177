#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "taar/annotator.hpp"
#include "taar/gateway.hpp"
#include "taar/prompts.hpp"
#include "taar/rng.hpp"
#include "taar/trace.hpp"
#include "taar/verify.hpp"

namespace taar::escape {

inline constexpr int kDefaultBudget = 36;     // N resampled trials per trajectory
inline constexpr int kDefaultWindowCap = 12;  // per-window sample cap (N/3)

enum class CutSource { reflection, new_approach, verification, escape_point, random };

inline std::string_view cut_source_name(CutSource s) {
    switch (s) {
        case CutSource::reflection: return "reflection";
        case CutSource::new_approach: return "new_approach";
        case CutSource::verification: return "verification";
        case CutSource::escape_point: return "escape_point";
        case CutSource::random: return "random";
    }
    return "random";
}

struct Cut {
    int segment_index = 0;
    CutSource source = CutSource::random;
    int n_samples = 0;
};

struct CutPlan {
    std::vector<Cut> cuts;      // ascending by segment_index, no duplicates
    int total_samples = 0;      // always equals the budget N
};

struct PerCut {
    int segment_index = 0;
    int trials = 0;
    int successes = 0;
    int gateway_errors = 0; // counted as failures, itemized here
};

struct EscapeEstimate {
    int n_trials = 0;
    int n_success = 0;
    double p_escape = 0.0; // n_success / n_trials exactly
    std::vector<PerCut> per_cut;
};

// Raised when a trap leaves no room for a continuation (t* = T-1).
struct DegenerateTrapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Cut-point planning: window points (W plus the escape point) receive an
// equal allocation capped at window_cap, one round-robin extra in ascending
// order for remainders; leftover budget becomes random cut points drawn
// uniformly without replacement from [t*+1, T-1] \ W (with replacement only
// when the eligible range is smaller than the residual budget).
inline CutPlan plan_cuts(const annotator::TrapAnnotation& ann, int T, int N,
                         std::uint64_t rng_seed, int window_cap = kDefaultWindowCap) {
    if (!ann.trap_index) throw std::invalid_argument("plan_cuts: annotation has no trap");
    if (N < 1) throw std::invalid_argument("plan_cuts: N must be >= 1");
    const int t_star = *ann.trap_index;
    const int lo = t_star + 1;
    const int hi = T - 1;
    if (lo > hi) {
        throw DegenerateTrapError("no valid cut position: t*+1 > T-1 for t*=" +
                                  std::to_string(t_star));
    }

    std::map<int, CutSource> window_sources;
    auto add_window = [&](const std::vector<int>& pts, CutSource source) {
        for (int p : pts) {
            if (p >= lo && p <= hi) window_sources.emplace(p, source);
        }
    };
    // escape point first: a coinciding label keeps the escape_point source
    if (ann.escape_point) {
        add_window({*ann.escape_point}, CutSource::escape_point);
    }
    add_window(ann.new_approach_points, CutSource::new_approach);
    add_window(ann.verification_points, CutSource::verification);
    add_window(ann.reflection_points, CutSource::reflection);

    std::vector<int> window_points;
    for (const auto& [idx, _] : window_sources) window_points.push_back(idx);

    std::map<int, int> allocation; // segment_index -> samples
    int leftover = N;
    if (!window_points.empty()) {
        const int w = static_cast<int>(window_points.size());
        const int base = std::min(N / w, window_cap);
        for (int p : window_points) allocation[p] = base;
        leftover = N - base * w;
        // round-robin extras in ascending segment order while below cap
        bool progressed = true;
        while (leftover > 0 && progressed) {
            progressed = false;
            for (int p : window_points) {
                if (leftover == 0) break;
                if (allocation[p] < window_cap) {
                    ++allocation[p];
                    --leftover;
                    progressed = true;
                }
            }
        }
    }

    if (leftover > 0) {
        std::vector<int> eligible;
        for (int p = lo; p <= hi; ++p) {
            if (!window_sources.count(p)) eligible.push_back(p);
        }
        std::mt19937_64 rng(rng_seed);
        std::map<int, int> random_allocation;
        if (eligible.empty()) {
            // windows cover the whole range; budget conservation wins over the cap
            while (leftover > 0) {
                for (int p : window_points) {
                    if (leftover == 0) break;
                    ++allocation[p];
                    --leftover;
                }
            }
        } else if (static_cast<int>(eligible.size()) >= leftover) {
            auto picks = sample_without_replacement(eligible, static_cast<std::size_t>(leftover), rng);
            for (int p : picks) random_allocation[p] += 1;
            leftover = 0;
        } else {
            for (int i = 0; i < leftover; ++i) {
                const auto j = uniform_below(rng, eligible.size());
                random_allocation[eligible[static_cast<std::size_t>(j)]] += 1;
            }
            leftover = 0;
        }
        for (const auto& [p, n] : random_allocation) {
            allocation[p] = n; // disjoint from window points by construction
        }
        for (const auto& [p, n] : random_allocation) {
            window_sources.emplace(p, CutSource::random);
        }
    }

    CutPlan plan;
    for (const auto& [p, n] : allocation) {
        if (n == 0) continue;
        const auto it = window_sources.find(p);
        plan.cuts.push_back(Cut{p, it == window_sources.end() ? CutSource::random : it->second, n});
        plan.total_samples += n;
    }
    return plan;
}

// Verifier handle used by the estimator: text -> correct?
using VerifyFn = std::function<bool(const std::string& generated_text)>;

inline VerifyFn make_verify_fn(const verify::Verifier& verifier, std::string ground_truth) {
    return [&verifier, truth = std::move(ground_truth)](const std::string& text) {
        return verifier.verify(text, truth).is_correct;
    };
}

// p_escape = (1/N) sum 1[Correct(y_hat)] over N resampled trials. Every cut
// truncates the trajectory via prefix_text and regenerates n_samples
// continuations through the bounded gateway; gateway failures count as
// incorrect, preserving the budget of exactly N issued requests.
inline EscapeEstimate estimate_escape(const trace::SegmentedTrajectory& traj, const CutPlan& plan,
                                      const gateway::EndpointConfig& reasoner,
                                      const VerifyFn& is_correct,
                                      gateway::DecodingConfig decoding = {},
                                      int max_in_flight = 8,
                                      std::uint64_t seed_base = 0) {
    const int T = traj.segment_count();
    std::vector<gateway::BatchRequest> requests;
    std::vector<int> cut_of_request;
    requests.reserve(static_cast<std::size_t>(plan.total_samples));
    for (std::size_t c = 0; c < plan.cuts.size(); ++c) {
        const Cut& cut = plan.cuts[c];
        if (cut.segment_index < 0 || cut.segment_index > T) {
            throw std::out_of_range("cut index outside trajectory");
        }
        const std::string prefix = trace::prefix_text(traj, cut.segment_index);
        const std::string prompt = prompts::build_continuation_prompt(traj.problem_text, prefix);
        for (int s = 0; s < cut.n_samples; ++s) {
            gateway::BatchRequest req;
            req.messages = {gateway::user_message(prompt)};
            req.decoding = decoding;
            // one decoding seed per trial at fixed temperature
            req.decoding.seed = static_cast<long long>(seed_base + requests.size());
            requests.push_back(std::move(req));
            cut_of_request.push_back(static_cast<int>(c));
        }
    }

    const auto results = gateway::generate_batch(requests, reasoner, max_in_flight);

    EscapeEstimate estimate;
    estimate.per_cut.reserve(plan.cuts.size());
    for (const Cut& cut : plan.cuts) {
        estimate.per_cut.push_back(PerCut{cut.segment_index, 0, 0, 0});
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
        PerCut& pc = estimate.per_cut[static_cast<std::size_t>(cut_of_request[i])];
        ++pc.trials;
        ++estimate.n_trials;
        if (!results[i].ok()) {
            ++pc.gateway_errors;
            continue;
        }
        if (is_correct(results[i].text)) {
            ++pc.successes;
            ++estimate.n_success;
        }
    }
    estimate.p_escape = estimate.n_trials == 0
                            ? 0.0
                            : static_cast<double>(estimate.n_success) / estimate.n_trials;
    return estimate;
}

// --- Escape JSONL schema -----------------------------------------------------
// {problem_id, model_id, plan:{cuts[]}, estimate:{n_trials, n_success,
//  p_escape, per_cut[]}, rng_seed}

inline nlohmann::ordered_json to_json(const CutPlan& plan) {
    nlohmann::ordered_json j;
    auto cuts = nlohmann::ordered_json::array();
    for (const Cut& c : plan.cuts) {
        cuts.push_back({{"segment_index", c.segment_index},
                        {"source", std::string(cut_source_name(c.source))},
                        {"n_samples", c.n_samples}});
    }
    j["cuts"] = std::move(cuts);
    j["total_samples"] = plan.total_samples;
    return j;
}

inline nlohmann::ordered_json to_json(const EscapeEstimate& est) {
    nlohmann::ordered_json j;
    j["n_trials"] = est.n_trials;
    j["n_success"] = est.n_success;
    j["p_escape"] = est.p_escape;
    auto per_cut = nlohmann::ordered_json::array();
    for (const PerCut& pc : est.per_cut) {
        per_cut.push_back({{"segment_index", pc.segment_index},
                           {"trials", pc.trials},
                           {"successes", pc.successes},
                           {"gateway_errors", pc.gateway_errors}});
    }
    j["per_cut"] = std::move(per_cut);
    return j;
}

inline EscapeEstimate estimate_from_json(const nlohmann::json& j) {
    EscapeEstimate est;
    est.n_trials = j.at("n_trials").get<int>();
    est.n_success = j.at("n_success").get<int>();
    est.p_escape = j.at("p_escape").get<double>();
    for (const auto& jp : j.value("per_cut", nlohmann::json::array())) {
        est.per_cut.push_back(PerCut{jp.at("segment_index").get<int>(),
                                     jp.at("trials").get<int>(),
                                     jp.at("successes").get<int>(),
                                     jp.value("gateway_errors", 0)});
    }
    return est;
}

} // namespace taar::escape
