#include "facelivt/cli.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "facelivt/archive.hpp"
#include "facelivt/bench.hpp"
#include "facelivt/config_file.hpp"
#include "facelivt/cost.hpp"
#include "facelivt/reparam.hpp"

namespace facelivt::cli {

using nlohmann::ordered_json;

namespace {

class VerificationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

double deviation_pct(double measured, double reference) { return (measured / reference - 1.0) * 100.0; }

std::string millions(std::uint64_t v, int precision) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << double(v) / 1e6;
    return os.str();
}

std::string signed_pct(double v) {
    std::ostringstream os;
    os << std::showpos << std::fixed << std::setprecision(2) << v << '%';
    return os.str();
}

ordered_json cost_json(const ModelConfig& config, Form form, const CostReport& report) {
    ordered_json j;
    j["variant"] = config.variant;
    j["heads"] = config.heads;
    j["form"] = std::string(to_string(form));
    j["flop_convention"] = "multiply-accumulate";
    j["total_params"] = report.total_params;
    j["total_flops"] = report.total_flops;
    j["per_stage"] = ordered_json::array();
    for (const auto& [name, e] : report.per_stage) {
        j["per_stage"].push_back({{"name", name}, {"params", e.params}, {"flops", e.flops}});
    }
    j["per_block_kind"] = ordered_json::object();
    for (const auto& [name, e] : report.per_block_kind) {
        j["per_block_kind"][name] = {{"params", e.params}, {"flops", e.flops}};
    }
    if (auto ref = reference_cost(config)) {
        j["reference"] = {{"label", ref->label},
                          {"params_m", ref->params_m},
                          {"flops_m", ref->flops_m},
                          {"params_deviation_pct", deviation_pct(double(report.total_params) / 1e6, ref->params_m)},
                          {"flops_deviation_pct", deviation_pct(double(report.total_flops) / 1e6, ref->flops_m)}};
    } else {
        j["reference"] = nullptr;
    }
    return j;
}

void print_cost_text(std::ostream& out, const ModelConfig& config, Form form, const CostReport& report) {
    out << "variant   " << config.variant << " (heads " << config.heads << ", form " << to_string(form) << ")\n"
        << "params    " << report.total_params << " (" << millions(report.total_params, 3) << " M)\n"
        << "flops     " << report.total_flops << " (" << millions(report.total_flops, 1)
        << " M, multiply-accumulate)\n";
    if (auto ref = reference_cost(config)) {
        out << "reference " << ref->label << ": " << ref->params_m << " M params ("
            << signed_pct(deviation_pct(double(report.total_params) / 1e6, ref->params_m)) << "), " << ref->flops_m
            << " M flops (" << signed_pct(deviation_pct(double(report.total_flops) / 1e6, ref->flops_m)) << ")\n";
    }
    out << "\n" << std::left << std::setw(12) << "stage" << std::right << std::setw(12) << "params" << std::setw(14)
        << "flops" << '\n';
    for (const auto& [name, e] : report.per_stage) {
        out << std::left << std::setw(12) << name << std::right << std::setw(12) << e.params << std::setw(14)
            << e.flops << '\n';
    }
    out << "\n" << std::left << std::setw(12) << "kind" << std::right << std::setw(12) << "params" << std::setw(14)
        << "flops" << '\n';
    for (const auto& [name, e] : report.per_block_kind) {
        out << std::left << std::setw(12) << name << std::right << std::setw(12) << e.params << std::setw(14)
            << e.flops << '\n';
    }
}

ordered_json fusion_json(const FusionReport& r) {
    return {{"max_abs_error", r.max_abs_error}, {"min_cosine", r.min_cosine},  {"probe_count", r.probe_count},
            {"blocks_fused", r.blocks_fused},   {"params_before", r.params_before}, {"params_after", r.params_after}};
}

ordered_json bench_json(const BenchResult& r) {
    return {{"variant", r.variant},
            {"form", std::string(to_string(r.form))},
            {"iterations", r.iterations},
            {"warmup", r.warmup},
            {"threads", r.threads},
            {"samples", r.samples_us.size()},
            {"mean_us", r.mean_us},
            {"median_us", r.median_us},
            {"p95_us", r.p95_us},
            {"throughput_per_s", r.throughput_per_s},
            {"host", r.host}};
}

ModelConfig resolve_config(const std::string& variant, const std::string& config_path, std::optional<std::size_t> heads) {
    if (variant.empty() == config_path.empty()) throw std::invalid_argument("give exactly one of --variant or --config");
    ModelConfig config = variant.empty() ? load_config_file(config_path) : preset(variant);
    if (heads) {
        config.heads = *heads;
        config.validate();
    }
    return config;
}

std::uint32_t read_le32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

Tensor load_image(const std::filesystem::path& path, std::size_t size) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    const std::size_t pixels = size * size;
    Tensor image({1, 3, size, size});
    auto from_rgb8 = [&](const std::uint8_t* rgb) {
        for (std::size_t p = 0; p < pixels; ++p)
            for (std::size_t c = 0; c < 3; ++c)
                image.data()[c * pixels + p] = static_cast<float>(rgb[p * 3 + c] / 127.5 - 1.0);
    };

    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') {
        // Header tokens are separated by whitespace; '#' starts a comment
        // running to the end of the line. One whitespace byte precedes the raster.
        std::size_t pos = 2;
        auto next_number = [&]() -> std::size_t {
            while (pos < bytes.size()) {
                if (bytes[pos] == '#') {
                    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                } else if (std::isspace(bytes[pos])) {
                    ++pos;
                } else {
                    break;
                }
            }
            std::size_t value = 0, digits = 0;
            for (; pos < bytes.size() && std::isdigit(bytes[pos]) && digits < 9; ++pos, ++digits) {
                value = value * 10 + (bytes[pos] - '0');
            }
            if (digits == 0) throw FormatError("image: malformed PPM header");
            return value;
        };
        const std::size_t w = next_number(), h = next_number(), maxval = next_number();
        if (w != size || h != size || maxval != 255) {
            throw FormatError("image: PPM must be " + std::to_string(size) + "x" + std::to_string(size) + ", maxval 255");
        }
        if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("image: malformed PPM header");
        const std::size_t offset = pos + 1;
        if (bytes.size() != offset + 3 * pixels) throw FormatError("image: PPM payload has the wrong size");
        from_rgb8(bytes.data() + offset);
    } else if (bytes.size() == 3 * pixels * 4) {
        for (std::size_t i = 0; i < 3 * pixels; ++i) image.data()[i] = std::bit_cast<float>(read_le32(&bytes[4 * i]));
        require_finite(image.data(), "image");
    } else if (bytes.size() == 3 * pixels) {
        from_rgb8(bytes.data());
    } else {
        throw FormatError("image: payload of " + std::to_string(bytes.size()) + " bytes is neither float32 3x" +
                          std::to_string(size) + "x" + std::to_string(size) + " nor 8-bit RGB");
    }
    return image;
}

std::vector<float> read_embedding(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.empty() || bytes.size() % 4 != 0) throw FormatError("embedding: payload is not a float32 vector");
    std::vector<float> v(bytes.size() / 4);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<float>(read_le32(&bytes[4 * i]));
    return v;
}

void write_embedding(const std::filesystem::path& path, std::span<const float> embedding) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(embedding.size() * 4);
    for (float f : embedding) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    write_file(path, bytes);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Face embedding inference and reparameterization toolkit", "facelivt"};
    app.require_subcommand(1);
    std::function<int()> action;

    // build
    std::string variant, config_path, out_path;
    std::optional<std::size_t> heads;
    std::uint64_t seed = 0;
    auto* build = app.add_subcommand("build", "Instantiate a train-form model with seeded weights");
    build->add_option("--variant", variant, "s, m, s-li or m-li");
    build->add_option("--config", config_path, "Variant description file");
    build->add_option("--heads", heads, "Override the attention head count");
    build->add_option("--seed", seed, "Weight seed");
    build->add_option("--out", out_path, "Archive to write")->required();
    build->callback([&] {
        action = [&] {
            const ModelConfig config = resolve_config(variant, config_path, heads);
            const Model model = build_model(config, seed);
            save_model(model, out_path);
            out << "wrote " << out_path << ": " << config.variant << ", dims (" << config.stage_dims[0] << ", "
                << config.stage_dims[1] << ", " << config.stage_dims[2] << ", " << config.stage_dims[3] << "), "
                << count_params(model) << " params\n";
            return kOk;
        };
    });

    // reparam
    std::string in_path, format = "text";
    bool no_fuse_bn = false, no_res_rep = false, no_dw1x1 = false;
    std::size_t probes = 5;
    auto* reparam = app.add_subcommand("reparam", "Fuse a train-form archive into deploy form");
    reparam->add_option("--in", in_path, "Train-form archive")->required();
    reparam->add_option("--out", out_path, "Deploy-form archive to write")->required();
    reparam->add_flag("--no-fuse-bn", no_fuse_bn, "Keep BN layers unfused");
    reparam->add_flag("--no-res-rep", no_res_rep, "Keep RepMix residuals explicit");
    reparam->add_flag("--no-dw1x1", no_dw1x1, "Keep the 1x1 depthwise branch separate");
    reparam->add_option("--probes", probes, "Probe images for the equivalence check");
    reparam->add_option("--seed", seed, "Probe seed");
    reparam->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));
    reparam->callback([&] {
        action = [&] {
            const Model model = load_model(in_path);
            ReparamOptions options{!no_fuse_bn, !no_res_rep, !no_dw1x1};
            auto [fused, report] = reparameterize_model(model, options, {probes, seed});
            save_model(fused, out_path);
            if (format == "json") {
                out << fusion_json(report).dump(2) << '\n';
            } else {
                out << "blocks fused    " << report.blocks_fused << '\n'
                    << "params before   " << report.params_before << '\n'
                    << "params after    " << report.params_after << '\n'
                    << "probes          " << report.probe_count << '\n'
                    << "max abs error   " << std::scientific << report.max_abs_error << '\n'
                    << "min cosine      " << std::fixed << std::setprecision(8) << report.min_cosine << '\n';
            }
            return kOk;
        };
    });

    // verify
    std::string train_path, deploy_path;
    auto* verify = app.add_subcommand("verify", "Check train/deploy archives produce equivalent embeddings");
    verify->add_option("--train", train_path)->required();
    verify->add_option("--deploy", deploy_path)->required();
    verify->add_option("--probes", probes, "Probe images");
    verify->add_option("--seed", seed, "Probe seed");
    verify->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));
    verify->callback([&] {
        action = [&] {
            const Model train = load_model(train_path);
            const Model deploy = load_model(deploy_path);
            if (!(train.config == deploy.config)) throw std::invalid_argument("verify: archives describe different configurations");
            const ProbeComparison cmp = compare_models(train, deploy, {probes, seed});
            const bool pass = cmp.max_abs_error < 1e-4 && cmp.min_cosine >= 0.9999;
            if (format == "json") {
                out << ordered_json{{"probes", probes},
                                    {"max_abs_error", cmp.max_abs_error},
                                    {"min_cosine", cmp.min_cosine},
                                    {"pass", pass}}
                           .dump(2)
                    << '\n';
            } else {
                out << "probes          " << probes << '\n'
                    << "max abs error   " << std::scientific << cmp.max_abs_error << " (limit 1e-4)\n"
                    << "min cosine      " << std::fixed << std::setprecision(8) << cmp.min_cosine << " (limit 0.9999)\n"
                    << (pass ? "PASS" : "FAIL") << '\n';
            }
            return pass ? kOk : kVerificationFailed;
        };
    });

    // cost
    std::string form_name;
    auto* cost = app.add_subcommand("cost", "Report parameter and operation counts");
    cost->add_option("--variant", variant, "s, m, s-li or m-li");
    cost->add_option("--config", config_path, "Variant description file");
    cost->add_option("--in", in_path, "Archive to count");
    cost->add_option("--heads", heads, "Override the attention head count");
    cost->add_option("--form", form_name, "train or deploy (variant/config only; default deploy)")
        ->check(CLI::IsMember({"train", "deploy"}));
    cost->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));
    cost->callback([&] {
        action = [&] {
            ModelConfig config;
            Form form = form_name == "train" ? Form::train : Form::deploy;
            CostReport report;
            if (!in_path.empty()) {
                if (!variant.empty() || !config_path.empty()) throw std::invalid_argument("--in excludes --variant/--config");
                if (heads) throw std::invalid_argument("--heads applies to --variant/--config only");
                const Model model = load_model(in_path);
                config = model.config;
                form = model.form;
                report = count_cost(model);
            } else {
                config = resolve_config(variant, config_path, heads);
                report = count_cost(config, form);
            }
            if (format == "json") {
                out << cost_json(config, form, report).dump(2) << '\n';
            } else {
                print_cost_text(out, config, form, report);
            }
            return kOk;
        };
    });

    // bench
    BenchOptions bench_options;
    auto* bench = app.add_subcommand("bench", "Time single-image forwards");
    bench->add_option("--in", in_path)->required();
    bench->add_option("--iters", bench_options.iterations)->check(CLI::PositiveNumber);
    bench->add_option("--warmup", bench_options.warmup);
    bench->add_option("--threads", bench_options.threads)->check(CLI::PositiveNumber);
    bench->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));
    bench->callback([&] {
        action = [&] {
            const BenchResult r = run_bench(load_model(in_path), bench_options);
            if (format == "json") {
                out << bench_json(r).dump(2) << '\n';
            } else {
                out << "variant     " << r.variant << " (" << to_string(r.form) << ")\n"
                    << "streams     " << r.threads << " x " << r.iterations << " iterations, " << r.warmup
                    << " warmup\n"
                    << "samples     " << r.samples_us.size() << '\n'
                    << std::fixed << std::setprecision(1) << "mean        " << r.mean_us << " us\n"
                    << "median      " << r.median_us << " us\n"
                    << "p95         " << r.p95_us << " us\n"
                    << "throughput  " << r.throughput_per_s << " forwards/s\n"
                    << "host        " << r.host << '\n';
            }
            return kOk;
        };
    });

    // embed
    std::string image_path;
    auto* embed = app.add_subcommand("embed", "Compute the embedding of one aligned face image");
    embed->add_option("--in", in_path, "Model archive")->required();
    embed->add_option("--image", image_path, "float32 3xSxS, 8-bit RGB or PPM image")->required();
    embed->add_option("--out", out_path, "Embedding file (float32)")->required();
    embed->callback([&] {
        action = [&] {
            const Model model = load_model(in_path);
            const std::vector<float> embedding = forward(model, load_image(image_path, model.config.input_size));
            write_embedding(out_path, embedding);
            out << "wrote " << out_path << " (" << embedding.size() << " floats)\n";
            return kOk;
        };
    });

    // compare
    std::string a_path, b_path;
    auto* compare = app.add_subcommand("compare", "Cosine similarity of two embeddings");
    compare->add_option("--a", a_path)->required();
    compare->add_option("--b", b_path)->required();
    compare->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));
    compare->callback([&] {
        action = [&] {
            const std::vector<float> a = read_embedding(a_path);
            const std::vector<float> b = read_embedding(b_path);
            if (a.size() != b.size()) throw FormatError("compare: embeddings have different lengths");
            const double cosine = cosine_similarity(a, b);
            if (format == "json") {
                out << ordered_json{{"cosine", cosine}}.dump(2) << '\n';
            } else {
                out << "cosine " << std::fixed << std::setprecision(8) << cosine << '\n';
            }
            return kOk;
        };
    });

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Print the configuration stored in an archive");
    inspect->add_option("--in", in_path)->required();
    inspect->callback([&] {
        action = [&] {
            const Model model = load_model(in_path);
            out << "# form = " << to_string(model.form) << ", params = " << count_params(model) << '\n'
                << format_config(model.config);
            return kOk;
        };
    });

    std::vector<std::string> argv_storage{"facelivt"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_storage) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        return action();
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kIoFormat;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIoFormat;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kIoFormat;
    }
}

}  // namespace facelivt::cli
