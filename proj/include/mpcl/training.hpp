#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpcl/checkpoint.hpp"
#include "mpcl/core/errors.hpp"
#include "mpcl/core/random.hpp"
#include "mpcl/data/batching.hpp"
#include "mpcl/data/groups.hpp"
#include "mpcl/encoder.hpp"
#include "mpcl/objectives.hpp"
#include "mpcl/optimizer.hpp"
#include "mpcl/tokenizer.hpp"

namespace mpcl {

enum class Objective { single, multi };
enum class Phase { warmup, main };

inline const char* to_string(Objective o) { return o == Objective::single ? "single" : "multi"; }
inline const char* to_string(Phase p) { return p == Phase::warmup ? "warmup" : "main"; }

struct TrainConfig {
    std::size_t batch_size = 128;
    std::size_t max_len = 64;
    double tau = 0.05;
    std::size_t warmup_steps = 2000;
    double lr_warmup = 2e-5;
    double lr_main = 1e-5;
    std::size_t k_positives = 5;
    std::size_t epochs = 1;
    std::uint64_t seed = 0;
    Objective objective = Objective::multi;
    bool warmup_enabled = true;
    bool use_hard_negatives = false;
    Normalization normalization = Normalization::min_max;
    // Encoder shape and optional clipping (0 disables).
    unsigned hash_bits = 16;
    std::size_t dim = 64;
    double max_grad_norm = 0.0;

    void validate() const {
        if (batch_size < 2) throw InvalidArgument("batch_size must be >= 2");
        if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
        if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("tau must be positive");
        if (!(lr_warmup > 0.0) || !(lr_main > 0.0) || !std::isfinite(lr_warmup) || !std::isfinite(lr_main)) {
            throw InvalidArgument("learning rates must be positive");
        }
        if (k_positives < 1) throw InvalidArgument("k_positives must be >= 1");
        if (hash_bits < 1 || hash_bits > 30) throw InvalidArgument("hash_bits must be in [1, 30]");
        if (dim < 1) throw InvalidArgument("dim must be >= 1");
        if (!(max_grad_norm >= 0.0) || !std::isfinite(max_grad_norm)) throw InvalidArgument("max_grad_norm must be >= 0");
    }

    LossConfig loss_config() const { return {tau, normalization, use_hard_negatives}; }
    Tokenizer tokenizer() const { return {hash_bits, max_len}; }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["batch_size"] = c.batch_size;
    j["max_len"] = c.max_len;
    j["tau"] = c.tau;
    j["warmup_steps"] = c.warmup_steps;
    j["lr_warmup"] = c.lr_warmup;
    j["lr_main"] = c.lr_main;
    j["k_positives"] = c.k_positives;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["objective"] = to_string(c.objective);
    j["warmup_enabled"] = c.warmup_enabled;
    j["use_hard_negatives"] = c.use_hard_negatives;
    j["normalization"] = to_string(c.normalization);
    j["hash_bits"] = c.hash_bits;
    j["dim"] = c.dim;
    j["max_grad_norm"] = c.max_grad_norm;
    return j;
}

namespace detail {

/// A JSON integer >= 0, whether it was stored signed or unsigned.
inline bool is_count(const nlohmann::json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

}  // namespace detail

/// Keys override `base`; unknown keys and wrong types are errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {}) {
    if (!j.is_object()) throw InvalidArgument("train config must be a JSON object");
    TrainConfig c = base;
    auto uint_field = [](const nlohmann::json& v, const std::string& key) {
        if (!detail::is_count(v)) throw InvalidArgument("config key '" + key + "' must be a non-negative integer");
        return v.get<std::uint64_t>();
    };
    auto real_field = [](const nlohmann::json& v, const std::string& key) {
        if (!v.is_number()) throw InvalidArgument("config key '" + key + "' must be a number");
        return v.get<double>();
    };
    auto bool_field = [](const nlohmann::json& v, const std::string& key) {
        if (!v.is_boolean()) throw InvalidArgument("config key '" + key + "' must be true or false");
        return v.get<bool>();
    };
    auto enum_field = [](const nlohmann::json& v, const std::string& key, const char* a, const char* b) {
        if (!v.is_string() || (v != a && v != b)) {
            throw InvalidArgument("config key '" + key + "' must be \"" + a + "\" or \"" + b + "\"");
        }
        return v == a;
    };
    for (const auto& [key, v] : j.items()) {
        if (key == "batch_size") c.batch_size = uint_field(v, key);
        else if (key == "max_len") c.max_len = uint_field(v, key);
        else if (key == "tau") c.tau = real_field(v, key);
        else if (key == "warmup_steps") c.warmup_steps = uint_field(v, key);
        else if (key == "lr_warmup") c.lr_warmup = real_field(v, key);
        else if (key == "lr_main") c.lr_main = real_field(v, key);
        else if (key == "k_positives") c.k_positives = uint_field(v, key);
        else if (key == "epochs") c.epochs = uint_field(v, key);
        else if (key == "seed") c.seed = uint_field(v, key);
        else if (key == "objective") c.objective = enum_field(v, key, "single", "multi") ? Objective::single : Objective::multi;
        else if (key == "warmup_enabled") c.warmup_enabled = bool_field(v, key);
        else if (key == "use_hard_negatives") c.use_hard_negatives = bool_field(v, key);
        else if (key == "normalization") c.normalization = enum_field(v, key, "min_max", "identity") ? Normalization::min_max : Normalization::identity;
        else if (key == "hash_bits") c.hash_bits = static_cast<unsigned>(std::min<std::uint64_t>(uint_field(v, key), 1000));
        else if (key == "dim") c.dim = uint_field(v, key);
        else if (key == "max_grad_norm") c.max_grad_norm = real_field(v, key);
        else throw InvalidArgument("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config", path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("invalid JSON: ") + e.what(), path.string());
    }
    return train_config_from_json(j);
}

struct ScheduleEntry {
    Phase phase;
    Objective objective;
    double lr;
};

inline ScheduleEntry schedule(std::uint64_t step, const TrainConfig& cfg) {
    if (cfg.warmup_enabled && step < cfg.warmup_steps) return {Phase::warmup, Objective::single, cfg.lr_warmup};
    return {Phase::main, cfg.objective, cfg.lr_main};
}

namespace detail {
enum : std::uint64_t { kInitStream = 1, kBatchStream = 2, kWarmupStream = 3 };
}

/// Embedding table uniform in (-0.05, 0.05), identity projection.
inline ModelParams<float> init_params(const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams<float> p{cfg.hash_bits, cfg.dim, Matrix<float>(std::size_t{1} << cfg.hash_bits, cfg.dim),
                         Matrix<float>::identity(cfg.dim)};
    Rng rng(derive_seed(seed, detail::kInitStream));
    for (float& v : p.embedding.storage()) {
        float f = static_cast<float>(uniform_real(rng, -0.05, 0.05));
        // Rounding to float can land on the boundary; keep the interval open.
        if (std::abs(static_cast<double>(f)) >= 0.05) f = std::nextafter(f, 0.0f);
        v = f;
    }
    return p;
}

struct TrainLogRecord {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    Phase phase = Phase::main;
    Objective objective = Objective::multi;
    double lr = 0.0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

inline nlohmann::ordered_json to_json(const TrainLogRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["phase"] = to_string(r.phase);
    j["objective"] = to_string(r.objective);
    j["lr"] = r.lr;
    j["loss"] = r.loss;
    j["wall_ms"] = r.wall_ms;
    return j;
}

struct TrainOptions {
    std::optional<ModelParams<float>> initial;             // fresh init from cfg.seed when empty
    std::optional<std::filesystem::path> checkpoint_dir;   // epoch_<e>.ckpt and final.ckpt
    std::function<void(const TrainLogRecord&)> log;
    // When set, supplies the dataset for each epoch (e.g. pairs redrawn per epoch).
    std::function<std::vector<SentenceGroup>(std::size_t epoch)> epoch_dataset;
};

struct TrainResult {
    ModelParams<float> params;
    OptimizerState<float> optimizer;
    std::uint64_t steps = 0;
    std::vector<double> epoch_mean_loss;
    std::size_t dropped_groups = 0;  // summed over epochs
};

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
    return dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
}

namespace detail {

/// One positive per group, chosen uniformly among the batch's K.
inline std::vector<TokenIds> pick_single_positive(const TrainingBatch& b, Rng& rng) {
    std::vector<TokenIds> out;
    out.reserve(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) out.push_back(b.positives[i * b.k + uniform_index(rng, b.k)]);
    return out;
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const std::vector<SentenceGroup>& groups, const TrainOptions& opt = {}) {
    cfg.validate();
    const BatchOptions batching{cfg.batch_size, cfg.k_positives, cfg.use_hard_negatives};
    validate_for_batching(groups, batching);
    const Tokenizer tok = cfg.tokenizer();
    const LossConfig loss_cfg = cfg.loss_config();

    TrainResult result;
    result.params = opt.initial ? *opt.initial : init_params(cfg, cfg.seed);
    result.params.validate();
    if (result.params.hash_bits != cfg.hash_bits || result.params.dim != cfg.dim) {
        throw InvalidArgument("initial parameters have hash_bits=" + std::to_string(result.params.hash_bits) +
                              " dim=" + std::to_string(result.params.dim) + ", config expects hash_bits=" +
                              std::to_string(cfg.hash_bits) + " dim=" + std::to_string(cfg.dim));
    }
    result.optimizer = OptimizerState<float>::zeros_like(result.params);
    if (opt.checkpoint_dir) std::filesystem::create_directories(*opt.checkpoint_dir);

    Rng warmup_rng(derive_seed(cfg.seed, detail::kWarmupStream));
    const auto start = std::chrono::steady_clock::now();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<SentenceGroup> redrawn;
        if (opt.epoch_dataset) {
            redrawn = opt.epoch_dataset(epoch);
            validate_for_batching(redrawn, batching);
        }
        const auto& data = opt.epoch_dataset ? redrawn : groups;
        const auto plan = make_batches(data, batching, tok, derive_seed(cfg.seed, detail::kBatchStream), epoch);
        result.dropped_groups += plan.dropped_groups;

        double loss_sum = 0.0;
        for (const auto& batch : plan.batches) {
            const auto sched = schedule(result.steps, cfg);
            const bool single = sched.objective == Objective::single;

            const auto anchors = encode(result.params, std::span<const TokenIds>(batch.anchors));
            const auto positive_ids = single && batch.k > 1 ? detail::pick_single_positive(batch, warmup_rng) : batch.positives;
            const auto positives = encode(result.params, std::span<const TokenIds>(positive_ids));
            std::optional<Encoded> hard;
            if (batch.hard_negatives) hard = encode(result.params, std::span<const TokenIds>(*batch.hard_negatives));

            ContrastiveBatch cb{anchors.embeddings, positives.embeddings, single ? 1 : batch.k, std::nullopt};
            if (hard) cb.hard_negatives = hard->embeddings;
            auto fail = [&](const std::string& what) {
                std::ostringstream msg;
                msg << what << " at step " << result.steps << " (epoch " << epoch << ", phase " << to_string(sched.phase)
                    << ", objective " << to_string(sched.objective) << ", lr " << sched.lr << ")";
                throw NumericError(msg.str());
            };
            LossOutput loss;
            try {
                loss = single ? single_positive_loss(cb, loss_cfg) : multi_positive_loss(cb, loss_cfg);
            } catch (const NumericError& e) {
                fail(e.what());
            }
            if (!std::isfinite(loss.value)) fail("non-finite loss " + std::to_string(loss.value));

            ParamGrads grads = encode_backward(result.params, anchors.cache, loss.grad_anchors);
            grads.add(encode_backward(result.params, positives.cache, loss.grad_positives));
            if (hard) grads.add(encode_backward(result.params, hard->cache, *loss.grad_hard_negatives));
            if (cfg.max_grad_norm > 0.0) {
                const double norm = std::sqrt(grads.squared_norm());
                if (norm > cfg.max_grad_norm) grads.scale(cfg.max_grad_norm / norm);
            }
            adam_step(result.params, result.optimizer, grads, sched.lr);

            loss_sum += loss.value;
            if (opt.log) {
                const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
                opt.log({result.steps, epoch, sched.phase, sched.objective, sched.lr, loss.value, ms});
            }
            ++result.steps;
        }
        result.epoch_mean_loss.push_back(plan.batches.empty() ? 0.0 : loss_sum / static_cast<double>(plan.batches.size()));
        if (opt.checkpoint_dir) save_checkpoint(result.params, result.optimizer, epoch_checkpoint_path(*opt.checkpoint_dir, epoch));
    }
    if (opt.checkpoint_dir) save_checkpoint(result.params, result.optimizer, *opt.checkpoint_dir / "final.ckpt");
    return result;
}

/// Appends one JSON object per record to a stream.
inline std::function<void(const TrainLogRecord&)> jsonl_log(std::ostream& out) {
    return [&out](const TrainLogRecord& r) { out << to_json(r).dump() << '\n'; };
}

}  // namespace mpcl
