// augsearch command-line tool.
//
// Exit codes: 0 success, 2 invalid configuration or input, 3 numerical abort
// (partial trace written), 1 anything else.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "augsearch/config.hpp"
#include "augsearch/data.hpp"
#include "augsearch/errors.hpp"
#include "augsearch/eval.hpp"
#include "augsearch/policy_io.hpp"
#include "augsearch/report.hpp"
#include "augsearch/search.hpp"

namespace fs = std::filesystem;
using namespace augsearch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

constexpr int kManifestVersion = 1;
constexpr int kTraceVersion = 1;

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("augsearch");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
    spdlog::level::level_enum level = spdlog::level::info;
    if (const char* env = std::getenv("AUGSEARCH_LOG")) {
        const auto parsed = spdlog::level::from_str(env);
        // from_str maps unknown names to "off"; only accept it when asked for.
        if (parsed != spdlog::level::off || std::string(env) == "off") level = parsed;
    }
    spdlog::set_level(level);
}

std::string to_hex(const unsigned char* data, unsigned len) {
    std::ostringstream s;
    for (unsigned i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(data[i]);
    return s.str();
}

/// SHA-1 of "blob <size>\0<content>", as git hashes file contents.
std::string git_blob_hash(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 || EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-1 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    return to_hex(digest, len);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ArgumentError("cannot read '" + p.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    return out;
}

std::string dataset_hash(const Dataset& d) {
    const auto bytes = encode_dataset(d);
    return git_blob_hash(std::string(bytes.begin(), bytes.end()));
}

nlohmann::json manifest(const RunConfig& rc, const std::string& config_text, const Splits& splits, const std::string& command) {
    nlohmann::json inputs = {{"config", git_blob_hash(config_text)},
                             {"train", dataset_hash(splits.train)},
                             {"val", dataset_hash(splits.val)},
                             {"test", dataset_hash(splits.test)}};
    const std::string combined = inputs["config"].get<std::string>() + inputs["train"].get<std::string>() +
                                 inputs["val"].get<std::string>() + inputs["test"].get<std::string>();
    return {{"command", command},
            {"tool_version", "0.1.0"},
            {"format_versions", {{"manifest", kManifestVersion}, {"policy", 1}, {"trace", kTraceVersion},
                                 {"augd", kDatasetVersion}}},
            {"seed", rc.seed},
            {"config", run_config_to_json(rc)},
            {"inputs", inputs},
            {"content_hash", git_blob_hash(combined)}};
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> workers;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "TOML run configuration")->required();
    cmd->add_option("--seed", c.seed, "override the configured seed");
    cmd->add_option("--out", c.out, "output directory (overrides out_dir)");
    cmd->add_option("--workers", c.workers, "worker threads");
}

RunConfig resolve(const Common& c, std::string& text) {
    RunConfig rc = load_run_config(c.config);
    text = read_file(c.config);
    if (c.seed) rc.seed = rc.search.seed = *c.seed;
    if (!c.out.empty()) rc.out_dir = c.out;
    if (c.workers) rc.workers = rc.search.workers = rc.eval.workers = *c.workers;
    validate(rc);
    return rc;
}

void write_search_outputs(const fs::path& dir, const PolicyTrace& trace) {
    {
        auto out = open_out(dir / "trace.csv");
        write_trace_csv(trace, out);
    }
    auto out = open_out(dir / "rounds.csv");
    write_rounds_csv(trace, out);
}

int run_search_command(const RunConfig& rc, const std::string& text, const std::string& label) {
    const fs::path dir = rc.out_dir;
    spdlog::info("{}: loading data", label);
    const Splits splits = load_splits(rc);
    spdlog::info("{}: train {} / val {} / test {} examples, {} rounds", label, splits.train.size(), splits.val.size(),
                 splits.test.size(), rc.search.n_rounds);
    const MlpClassifier model = make_model(rc.search, splits.train);
    {
        auto out = open_out(dir / "manifest.json");
        out << manifest(rc, text, splits, label).dump(2) << '\n';
    }
    try {
        const SearchResult result = run_search(model, rc.search, splits);
        save_policy(result.policy, (dir / "policy.json").string());
        write_search_outputs(dir, result.trace);
        if (!result.pretraining.empty()) {
            auto out = open_out(dir / "pretrain.csv");
            out << "step,loss\n";
            const auto& curve = result.pretraining.front().loss_curve;
            for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
        }
        const Eigen::VectorXd p = mean_probabilities(result.policy);
        for (std::size_t i = 0; i < result.policy.transforms.size(); ++i) {
            spdlog::debug("  {:<13} p={:.4f} mu={:.3f}", to_string(result.policy.transforms[i]), p[static_cast<Eigen::Index>(i)],
                          result.policy.mag_upper[static_cast<Eigen::Index>(i)]);
        }
        spdlog::info("{}: wrote {}", label, (dir / "policy.json").string());
        return kExitOk;
    } catch (const SearchAborted& e) {
        write_search_outputs(dir, e.trace());
        spdlog::error("{}: {} (partial trace in {})", label, e.what(), (dir / "trace.csv").string());
        return kExitNumerical;
    }
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Augmentation policy search"};
    app.require_subcommand(1);

    Common search_opts;
    auto* search = app.add_subcommand("search", "pretrain, then search a policy");
    add_common(search, search_opts);

    Common eval_opts;
    std::string eval_policy;
    std::string eval_label;
    auto* evaluate = app.add_subcommand("evaluate", "retrain on train+val under a policy and report test accuracy");
    add_common(evaluate, eval_opts);
    evaluate->add_option("--policy", eval_policy, "policy JSON, or 'none' / 'uniform'")->required();
    evaluate->add_option("--label", eval_label, "row label in the ledger (default: policy path)");

    Common ablate_opts;
    std::string preset_name;
    int ensemble_size = kDefaultEnsembleSize;
    auto* ablate = app.add_subcommand("ablate", "search with an ablation preset");
    add_common(ablate, ablate_opts);
    ablate->add_option("--preset", preset_name, "no-kl, warm-start, single-stage or ensemble")->required();
    ablate->add_option("--ensemble-size", ensemble_size, "replicas for the ensemble preset");

    std::string trace_path;
    std::string report_out;
    std::string report_policy;
    auto* report = app.add_subcommand("report", "probability curves and pie chart from a trace");
    report->add_option("--trace", trace_path, "trace CSV written by search")->required();
    report->add_option("--out", report_out, "output directory")->required();
    report->add_option("--policy", report_policy, "draw the pie from this policy instead of the last trace row");

    std::string csv_path;
    std::string convert_out;
    int width = 16, height = 16, channels = 1, classes = 4;
    double scale = 255.0;
    auto* convert = app.add_subcommand("convert", "CSV (label + flattened pixels per row) to AUGD");
    convert->add_option("--csv", csv_path)->required();
    convert->add_option("--out", convert_out)->required();
    convert->add_option("--width", width);
    convert->add_option("--height", height);
    convert->add_option("--channels", channels);
    convert->add_option("--classes", classes);
    convert->add_option("--scale", scale, "pixel value that maps to 1.0");

    std::string export_policy_path;
    std::string export_out;
    auto* export_policy = app.add_subcommand("export-policy", "policy JSON to a per-transform CSV table");
    export_policy->add_option("--policy", export_policy_path)->required();
    export_policy->add_option("--out", export_out, "CSV path (default: stdout)");

    std::string gen_kind = "rotation-invariant";
    std::string gen_out;
    std::size_t gen_n = 2000;
    int gen_side = 16;
    std::uint64_t gen_seed = 0;
    double gen_fraction = 1.0;
    auto* generate = app.add_subcommand("generate", "write a synthetic dataset as AUGD");
    generate->add_option("--kind", gen_kind);
    generate->add_option("--n", gen_n);
    generate->add_option("--side", gen_side);
    generate->add_option("--seed", gen_seed);
    generate->add_option("--nuisance-fraction", gen_fraction, "share of examples with a random pose");
    generate->add_option("--out", gen_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        if (*search) {
            std::string text;
            const RunConfig rc = resolve(search_opts, text);
            return run_search_command(rc, text, "search");
        }
        if (*ablate) {
            std::string text;
            RunConfig rc = resolve(ablate_opts, text);
            rc.search = apply_preset(rc.search, preset_from_string(preset_name), ensemble_size);
            validate(rc);
            if (ablate_opts.out.empty()) rc.out_dir /= preset_name;
            return run_search_command(rc, text, "ablate " + preset_name);
        }
        if (*evaluate) {
            std::string text;
            const RunConfig rc = resolve(eval_opts, text);
            std::optional<Policy> policy;
            if (eval_policy == "uniform") {
                policy = uniform_policy(rc.search.num_slots, rc.search.transforms, rc.search.mu_init);
            } else if (eval_policy != "none") {
                policy = load_policy(eval_policy);
            }
            const Splits splits = load_splits(rc);
            spdlog::info("evaluate: {} seeds, {} epochs", rc.eval_seeds.size(), rc.eval.epochs);
            const EvalReport rep = evaluate_policy(policy, splits, rc.eval, rc.eval_seeds);
            const fs::path dir = rc.out_dir;
            {
                auto out = open_out(dir / "eval.json");
                nlohmann::json j = report_to_json(rep);
                j["policy"] = eval_policy;
                j["manifest"] = manifest(rc, text, splits, "evaluate");
                out << j.dump(2) << '\n';
            }
            append_ledger_row(rep, eval_label.empty() ? eval_policy : eval_label, (dir / "ledger.csv").string());
            spdlog::info("evaluate: accuracy {:.4f} +- {:.4f}", rep.mean, rep.ci_half_width);
            std::cout << rep.mean << ' ' << rep.ci_half_width << '\n';
            return kExitOk;
        }
        if (*report) {
            std::ifstream in(trace_path);
            if (!in) throw ArgumentError("cannot read trace '" + trace_path + "'");
            const TraceTable table = parse_trace_csv(in);
            const fs::path dir = report_out;
            {
                auto out = open_out(dir / "curves.csv");
                write_curves_csv(table, out);
            }
            open_out(dir / "curves.svg") << curves_svg(table);
            const auto slices = report_policy.empty() ? pie_slices(table) : pie_slices(load_policy(report_policy));
            open_out(dir / "pie.svg") << pie_svg(slices);
            spdlog::info("report: {} records -> {}", table.size(), dir.string());
            return kExitOk;
        }
        if (*convert) {
            std::ifstream in(csv_path);
            if (!in) throw ArgumentError("cannot read CSV '" + csv_path + "'");
            const Dataset d = dataset_from_csv(in, width, height, channels, classes, scale);
            save_dataset(d, convert_out);
            spdlog::info("convert: {} examples -> {}", d.size(), convert_out);
            return kExitOk;
        }
        if (*export_policy) {
            const Policy p = load_policy(export_policy_path);
            std::ostringstream s;
            s << "transform,mean_probability";
            for (int k = 0; k < p.num_slots(); ++k) s << ",p_slot" << k;
            s << ",mu\n";
            const Eigen::MatrixXd probs = slot_probabilities(p);
            const Eigen::VectorXd mean = mean_probabilities(p);
            for (std::size_t i = 0; i < p.transforms.size(); ++i) {
                const auto n = static_cast<Eigen::Index>(i);
                s << to_string(p.transforms[i]) << ',' << mean[n];
                for (Eigen::Index k = 0; k < probs.rows(); ++k) s << ',' << probs(k, n);
                s << ',' << p.mag_upper[n] << '\n';
            }
            if (export_out.empty()) {
                std::cout << s.str();
            } else {
                open_out(export_out) << s.str();
            }
            return kExitOk;
        }
        if (*generate) {
            const Dataset d = generate_synthetic(gen_kind, gen_n, gen_side, gen_seed, gen_fraction);
            save_dataset(d, gen_out);
            spdlog::info("generate: {} examples -> {}", d.size(), gen_out);
            return kExitOk;
        }
    } catch (const ArgumentError& e) {
        spdlog::error("{}", e.what());
        return kExitInvalid;
    } catch (const FormatError& e) {
        spdlog::error("{}", e.what());
        return kExitInvalid;
    } catch (const NumericalError& e) {
        spdlog::error("{}", e.what());
        return kExitNumerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitOther;
    }
    return kExitOther;
}
