// Reference computation of the SFT and DPO objectives from sequence
// logprobs, with analytic gradients for verification. Not a trainer: the
// point is bit-correct losses any training stack can be checked against.
//
// Sequence log-likelihoods are SUMS over target tokens, not means; DPO
// implementations differ on this and the two conventions are not
// interchangeable.
#pragma once

#include <cmath>

#include "skr/common.hpp"
#include "skr/provider.hpp"

namespace skr {

struct SftLoss {
    double loss = 0.0;            // negative sum of target logprobs
    double per_token_mean = 0.0;  // loss / token count
};

inline SftLoss sft_nll(const TargetLogprobs& target_logprobs) {
    validate(target_logprobs);
    double sum = 0.0;
    for (double v : target_logprobs.logprobs) sum += v;
    const double loss = -sum;
    return {loss, loss / static_cast<double>(target_logprobs.token_count())};
}

struct DpoInputs {
    double policy_chosen = 0.0;    // log pi(r_w | x)
    double policy_rejected = 0.0;  // log pi(r_l | x)
    double ref_chosen = 0.0;       // log pi_sft(r_w | x)
    double ref_rejected = 0.0;     // log pi_sft(r_l | x)
    double beta = 0.1;
};

inline void validate(const DpoInputs& in) {
    for (double v : {in.policy_chosen, in.policy_rejected, in.ref_chosen, in.ref_rejected}) {
        if (!std::isfinite(v) || v > 0.0)
            throw validation_error("dpo inputs: log-likelihoods must be finite and <= 0");
    }
    if (!(in.beta > 0.0) || !std::isfinite(in.beta)) throw validation_error("dpo inputs: beta must be positive");
}

struct DpoResult {
    double loss = 0.0;
    double margin = 0.0;  // beta * ((pc - rc) - (pr - rr))
};

// -log sigmoid(margin), computed as softplus(-margin) so large |margin|
// cannot overflow.
inline DpoResult dpo_loss(const DpoInputs& in) {
    validate(in);
    const double margin = in.beta * ((in.policy_chosen - in.ref_chosen) - (in.policy_rejected - in.ref_rejected));
    return {softplus(-margin), margin};
}

struct DpoGrad {
    double d_policy_chosen = 0.0;
    double d_policy_rejected = 0.0;
};

inline DpoGrad dpo_grad(const DpoInputs& in) {
    const DpoResult r = dpo_loss(in);
    const double slope = in.beta * (1.0 - sigmoid(r.margin));
    return {-slope, slope};
}

}  // namespace skr
