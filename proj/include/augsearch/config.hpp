#pragma once

// TOML run configuration. Every key is optional and defaults to the values in
// SearchConfig / EvalConfig; unknown keys are rejected so typos do not pass
// silently. Paths are resolved relative to the config file.

#include <toml.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "augsearch/data.hpp"
#include "augsearch/errors.hpp"
#include "augsearch/eval.hpp"
#include "augsearch/search.hpp"

namespace augsearch {

struct DataConfig {
    // Either a synthetic kind or a dataset file; the test set is generated or
    // loaded the same way.
    std::string synthetic = "rotation-invariant";
    std::filesystem::path path;       // AUGD file split into train/val
    std::filesystem::path test_path;  // AUGD file for the test split
    std::size_t n = 2000;
    std::size_t n_test = 1000;
    int side = 16;
    double split_ratio = 0.5;

    bool from_file() const { return !path.empty(); }
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    int workers = 1;
    SearchConfig search;
    EvalConfig eval;
    std::vector<std::uint64_t> eval_seeds = {0, 1, 2, 3};
    DataConfig data;
};

namespace detail {

class TableReader {
public:
    TableReader(const toml::table& t, std::string prefix) : table_(t), prefix_(std::move(prefix)) {}

    template <typename T>
    void read(std::string_view key, T& out) {
        seen_.insert(std::string(key));
        const toml::node* node = table_.get(key);
        if (!node) return;
        if constexpr (std::is_same_v<T, bool>) {
            if (auto v = node->value_exact<bool>()) { out = *v; return; }
        } else if constexpr (std::is_integral_v<T>) {
            if (auto v = node->value_exact<std::int64_t>()) {
                if (*v < 0 && std::is_unsigned_v<T>) fail(key, "must be non-negative");
                out = static_cast<T>(*v);
                return;
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (auto v = node->value<double>()) { out = *v; return; }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (auto v = node->value_exact<std::string>()) { out = *v; return; }
        }
        fail(key, "has the wrong type");
    }

    void read_path(std::string_view key, std::filesystem::path& out, const std::filesystem::path& base) {
        std::string s;
        read(key, s);
        if (!s.empty()) out = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
    }

    template <typename T>
    void read_list(std::string_view key, std::vector<T>& out) {
        seen_.insert(std::string(key));
        const toml::node* node = table_.get(key);
        if (!node) return;
        const toml::array* arr = node->as_array();
        if (!arr) fail(key, "must be an array");
        out.clear();
        for (const auto& el : *arr) {
            if constexpr (std::is_same_v<T, std::string>) {
                auto v = el.value_exact<std::string>();
                if (!v) fail(key, "must contain strings");
                out.push_back(*v);
            } else {
                auto v = el.value_exact<std::int64_t>();
                if (!v || *v < 0) fail(key, "must contain non-negative integers");
                out.push_back(static_cast<T>(*v));
            }
        }
    }

    const toml::table* subtable(std::string_view key) {
        seen_.insert(std::string(key));
        const toml::node* node = table_.get(key);
        if (!node) return nullptr;
        if (!node->is_table()) fail(key, "must be a table");
        return node->as_table();
    }

    void reject_unknown() const {
        for (const auto& [k, v] : table_) {
            if (!seen_.contains(std::string(k.str()))) {
                throw ArgumentError("config: unknown key '" + prefix_ + std::string(k.str()) + "'");
            }
        }
    }

private:
    [[noreturn]] void fail(std::string_view key, const std::string& why) const {
        throw ArgumentError("config: '" + prefix_ + std::string(key) + "' " + why);
    }

    const toml::table& table_;
    std::string prefix_;
    std::set<std::string> seen_;
};

}  // namespace detail

inline void validate(const RunConfig& rc) {
    validate(rc.search);
    const DataConfig& d = rc.data;
    if (!(d.split_ratio > 0.0 && d.split_ratio < 1.0)) throw ArgumentError("config: data.split_ratio must lie in (0, 1)");
    if (d.from_file()) {
        if (!std::filesystem::exists(d.path)) throw ArgumentError("config: data.path '" + d.path.string() + "' does not exist");
        if (d.test_path.empty()) throw ArgumentError("config: data.test_path is required with data.path");
        if (!std::filesystem::exists(d.test_path)) {
            throw ArgumentError("config: data.test_path '" + d.test_path.string() + "' does not exist");
        }
    } else {
        (void)synthetic_kind_from_string(d.synthetic);
        if (d.n < 4 * static_cast<std::size_t>(kSyntheticClasses) || d.n_test < 1) throw ArgumentError("config: dataset sizes too small");
        if (d.side < 4) throw ArgumentError("config: data.side must be >= 4");
    }
    if (rc.eval.epochs < 0 || rc.eval.batch_size < 1) throw ArgumentError("config: eval.epochs/batch_size invalid");
    if (!(rc.eval.base_lr > 0.0)) throw ArgumentError("config: eval.base_lr must be positive");
    if (rc.eval_seeds.empty()) throw ArgumentError("config: eval.seeds must not be empty");
    if (rc.workers < 1) throw ArgumentError("config: workers must be >= 1");
}

/// Builds a RunConfig from a parsed table; `base` anchors relative paths.
inline RunConfig run_config_from_toml(const toml::table& root, const std::filesystem::path& base = {}) {
    RunConfig rc;
    detail::TableReader top(root, "");
    top.read("seed", rc.seed);
    top.read_path("out_dir", rc.out_dir, base);
    top.read("workers", rc.workers);

    if (const toml::table* t = top.subtable("data")) {
        detail::TableReader r(*t, "data.");
        r.read("synthetic", rc.data.synthetic);
        r.read_path("path", rc.data.path, base);
        r.read_path("test_path", rc.data.test_path, base);
        r.read("n", rc.data.n);
        r.read("n_test", rc.data.n_test);
        r.read("side", rc.data.side);
        r.read("split_ratio", rc.data.split_ratio);
        r.reject_unknown();
    }

    SearchConfig& s = rc.search;
    if (const toml::table* t = top.subtable("search")) {
        detail::TableReader r(*t, "search.");
        r.read("n_rounds", s.n_rounds);
        r.read("n_retrain", s.n_retrain);
        r.read("n_total", s.n_total);
        r.read("n_aug", s.n_aug);
        r.read("train_batch_size", s.train_batch_size);
        r.read("val_batch_size", s.val_batch_size);
        r.read("base_lr", s.base_lr);
        r.read("momentum", s.momentum);
        r.read("weight_decay", s.weight_decay);
        r.read("alpha", s.alpha);
        r.read("lambda", s.lambda);
        r.read("mu_lr_divisor", s.mu_lr_divisor);
        r.read("policy_momentum", s.policy_momentum);
        r.read("num_slots", s.num_slots);
        r.read("mu_init", s.mu_init);
        r.read("pretrain_steps", s.pretrain_steps);
        r.read("hidden", s.hidden);
        r.read("kl", s.mode.kl_on);
        r.read("cold_start", s.mode.cold_start);
        r.read("single_stage", s.mode.single_stage);
        r.read("ensemble_size", s.mode.ensemble_size);
        std::vector<std::string> names;
        r.read_list("transforms", names);
        if (!names.empty()) {
            s.transforms.clear();
            for (const auto& n : names) {
                const auto id = transform_from_string(n);
                if (!id) throw ArgumentError("config: unknown transform '" + n + "'");
                s.transforms.push_back(*id);
            }
        }
        r.reject_unknown();
    }

    EvalConfig& e = rc.eval;
    if (const toml::table* t = top.subtable("eval")) {
        detail::TableReader r(*t, "eval.");
        r.read("epochs", e.epochs);
        r.read("batch_size", e.batch_size);
        r.read("base_lr", e.base_lr);
        r.read("momentum", e.momentum);
        r.read("weight_decay", e.weight_decay);
        r.read("hidden", e.hidden);
        r.read("per_image_sampling", e.per_image_sampling);
        r.read_list("seeds", rc.eval_seeds);
        r.reject_unknown();
    }
    top.reject_unknown();

    s.seed = rc.seed;
    s.workers = rc.workers;
    e.workers = rc.workers;
    return rc;
}

inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base = {}) {
    try {
        return run_config_from_toml(toml::parse(text), base);
    } catch (const toml::parse_error& err) {
        throw ArgumentError(std::string("config: ") + std::string(err.description()) + " (line " +
                            std::to_string(err.source().begin.line) + ")");
    }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ArgumentError("config file '" + path.string() + "' does not exist");
    try {
        return run_config_from_toml(toml::parse_file(path.string()), path.parent_path());
    } catch (const toml::parse_error& err) {
        throw ArgumentError("config '" + path.string() + "': " + std::string(err.description()) + " (line " +
                            std::to_string(err.source().begin.line) + ")");
    }
}

/// Echo of every setting, used in run manifests.
inline nlohmann::json run_config_to_json(const RunConfig& rc) {
    const SearchConfig& s = rc.search;
    std::vector<std::string> names;
    for (TransformId id : s.transforms) names.emplace_back(to_string(id));
    nlohmann::json data = {{"split_ratio", rc.data.split_ratio}};
    if (rc.data.from_file()) {
        data["path"] = rc.data.path.string();
        data["test_path"] = rc.data.test_path.string();
    } else {
        data["synthetic"] = rc.data.synthetic;
        data["n"] = rc.data.n;
        data["n_test"] = rc.data.n_test;
        data["side"] = rc.data.side;
    }
    nlohmann::json eval = eval_config_to_json(rc.eval);
    eval["seeds"] = rc.eval_seeds;
    return {{"seed", rc.seed},
            {"workers", rc.workers},
            {"out_dir", rc.out_dir.string()},
            {"data", data},
            {"search",
             {{"n_rounds", s.n_rounds},
              {"n_retrain", s.n_retrain},
              {"n_total", s.n_total},
              {"n_aug", s.n_aug},
              {"train_batch_size", s.train_batch_size},
              {"val_batch_size", s.val_batch_size},
              {"base_lr", s.base_lr},
              {"momentum", s.momentum},
              {"weight_decay", s.weight_decay},
              {"alpha", s.alpha},
              {"lambda", s.lambda},
              {"mu_lr_divisor", s.mu_lr_divisor},
              {"policy_momentum", s.policy_momentum},
              {"num_slots", s.num_slots},
              {"mu_init", s.mu_init},
              {"pretrain_steps", s.effective_pretrain_steps()},
              {"hidden", s.hidden},
              {"kl", s.mode.kl_on},
              {"cold_start", s.mode.cold_start},
              {"single_stage", s.mode.single_stage},
              {"ensemble_size", s.mode.ensemble_size},
              {"transforms", names}}},
            {"eval", eval}};
}

enum class Preset { NoKl, WarmStart, SingleStage, Ensemble };

inline Preset preset_from_string(std::string_view s) {
    if (s == "no-kl") return Preset::NoKl;
    if (s == "warm-start") return Preset::WarmStart;
    if (s == "single-stage") return Preset::SingleStage;
    if (s == "ensemble") return Preset::Ensemble;
    throw ArgumentError("unknown ablation preset '" + std::string(s) + "' (no-kl, warm-start, single-stage, ensemble)");
}

inline constexpr int kDefaultEnsembleSize = 4;

/// no-kl drops the anchor, quarters alpha and uses a mu divisor of 10;
/// single-stage anchors at the uniform policy (entropy regularization).
inline SearchConfig apply_preset(SearchConfig c, Preset p, int ensemble_size = kDefaultEnsembleSize) {
    switch (p) {
        case Preset::NoKl:
            c.mode.kl_on = false;
            c.alpha *= 0.25;
            c.mu_lr_divisor = 10.0;
            break;
        case Preset::WarmStart:
            c.mode.cold_start = false;
            break;
        case Preset::SingleStage:
            c.mode.single_stage = true;
            break;
        case Preset::Ensemble:
            if (ensemble_size < 1) throw ArgumentError("ensemble size must be >= 1");
            c.mode.ensemble_size = ensemble_size;
            break;
    }
    return c;
}

/// Loads or generates the three splits described by the config.
inline Splits load_splits(const RunConfig& rc) {
    const DataConfig& d = rc.data;
    if (d.from_file()) {
        Dataset all = load_dataset(d.path.string());
        auto [train, val] = split(all, d.split_ratio, mix_seed(rc.seed, 1));
        return Splits{std::move(train), std::move(val), load_dataset(d.test_path.string())};
    }
    return make_synthetic_splits(synthetic_kind_from_string(d.synthetic), d.n, d.n_test, d.side, rc.seed, d.split_ratio);
}

}  // namespace augsearch
