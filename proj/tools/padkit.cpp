// Command-line front end. Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>

#include "padkit/activity_maps.hpp"
#include "padkit/denoiser.hpp"
#include "padkit/diffusion.hpp"
#include "padkit/io.hpp"
#include "padkit/radiomics.hpp"
#include "padkit/stats.hpp"
#include "padkit/study.hpp"
#include "padkit/study_server.hpp"
#include "padkit/tumor_sim.hpp"

using namespace padkit;
namespace fs = std::filesystem;

namespace {

io::RunConfig load_config(const std::string& path) {
    return path.empty() ? io::default_run_config() : io::load_run_config(path);
}

void ensure_parent(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ofstream open_out(const fs::path& path) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    return out;
}

std::string case_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04zu", i);
    return buf;
}

std::vector<fs::path> case_dirs(const fs::path& root) {
    if (!fs::is_directory(root)) throw ConfigError("data directory '" + root.string() + "' does not exist");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && e.path().filename().string().starts_with("case_")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ConfigError("no case_* directories under '" + root.string() + "'");
    return dirs;
}

ScalarGrid2D to_normalized(const ScalarGrid2D& g, const NormalizationParams& np) {
    if (g.unit == UnitTag::normalized) return g;
    return arcsinh_normalize(g, np);
}

LabelGrid2D single_label(const LabelGrid2D& labels, int label) {
    LabelGrid2D m(labels.height(), labels.width());
    m.labels = (labels.labels.array() == label).cast<std::int32_t>().matrix();
    return m;
}

std::vector<int> present_labels(const LabelGrid2D& labels) {
    std::set<int> s;
    for (Eigen::Index i = 0; i < labels.labels.size(); ++i) {
        if (labels.labels.data()[i] != 0) s.insert(labels.labels.data()[i]);
    }
    return {s.begin(), s.end()};
}

// ------------------------------------------------------------------ commands

void cmd_normalize(const std::string& in, const std::string& out, bool inverse, const io::RunConfig& cfg) {
    const ScalarGrid2D g = io::read_scalar(in);
    ensure_parent(out);
    io::write_tensor(inverse ? denormalize(g, cfg.normalization) : arcsinh_normalize(g, cfg.normalization), out);
}

void cmd_build_map(const std::string& labels_path, const std::string& pet_path, const std::string& stats_path,
                   const std::string& out, const std::string& stats_out) {
    const LabelGrid2D labels = io::read_labels(labels_path);
    std::vector<OrganStats> stats;
    if (!pet_path.empty()) {
        stats = organ_means(io::read_scalar(pet_path), labels);
    } else {
        std::ifstream in(stats_path);
        if (!in) throw ConfigError("cannot open '" + stats_path + "'");
        stats = read_organ_stats_csv(in);
    }
    ensure_parent(out);
    io::write_tensor(build_uniform_map(labels, stats), out);
    if (!stats_out.empty()) {
        auto os = open_out(stats_out);
        write_organ_stats_csv(os, stats);
    }
}

void cmd_phantoms(int n, std::uint64_t seed, const std::string& out, const io::RunConfig& cfg) {
    if (n < 1) throw InvalidParameter("--n must be >= 1");
    for (int i = 0; i < n; ++i) {
        PhantomConfig pc;
        pc.grid_size = cfg.phantoms.grid_size;
        pc.organ_count = cfg.phantoms.organ_count;
        pc.seed = mix_seed(seed, std::uint64_t(i));
        const PhantomCase c = synth_phantom(pc);
        const fs::path dir = fs::path(out) / case_name(std::size_t(i));
        fs::create_directories(dir);
        io::write_tensor(c.labels, dir / "labels");
        io::write_tensor(c.target, dir / "target");
        io::write_tensor(c.uniform_map, dir / "uniform_map");
        auto os = open_out(dir / "assigned.csv");
        write_organ_stats_csv(os, c.assigned);
    }
}

void cmd_train(const std::string& phase_name, const std::string& data, const std::string& out, int iterations,
               std::optional<std::uint64_t> seed, const std::string& trace, bool verbose, const io::RunConfig& cfg) {
    const Phase phase = phase_from_string(phase_name);
    TrainConfig tc = cfg.train(phase);
    if (iterations >= 0) {
        tc.iterations = iterations;
        tc.freeze_iters = std::min(tc.freeze_iters, iterations);
    }
    if (seed) tc.seed = *seed;
    std::vector<TrainingPair> pairs;
    for (const auto& dir : case_dirs(data)) {
        pairs.push_back({to_normalized(io::read_scalar(dir / "uniform_map"), cfg.normalization).values,
                         to_normalized(io::read_scalar(dir / "target"), cfg.normalization).values});
    }
    const TrainResult r = train_phase(tc, pairs, [&](int k, const LossTerms& l) {
        if (verbose && k % 100 == 0) {
            std::cerr << to_string(phase) << " iter " << k << " total " << l.total << " mse " << l.mse << '\n';
        }
    });
    ensure_parent(out);
    save_checkpoint(out, {phase, r.params, r.ema.shadow, tc.ema_decay, tc.schedule_kind, tc.timesteps});
    if (!trace.empty()) {
        auto os = open_out(trace);
        write_loss_trace_csv(os, r.trace);
    }
}

PhaseModel model_from(const Checkpoint& c) {
    return {c.params.config, c.ema, make_schedule(c.schedule_kind, c.timesteps)};
}

void cmd_generate(const std::string& base, const std::string& super, const std::string& map, const std::string& out,
                  std::uint64_t seed, const io::RunConfig& cfg) {
    const Checkpoint b = load_checkpoint(base);
    const Checkpoint s = load_checkpoint(super);
    if (b.phase != Phase::base || s.phase != Phase::super_res) {
        throw ConfigError("generate: --base must be a base checkpoint and --super a super-resolution checkpoint");
    }
    Rng rng(seed);
    const ScalarGrid2D m = to_normalized(io::read_scalar(map), cfg.normalization);
    ensure_parent(out);
    io::write_tensor(denormalize(generate(model_from(b), model_from(s), m, rng), cfg.normalization), out);
}

void cmd_eval_ccc(const std::string& pred, const std::string& ref, const std::string& column) {
    const auto p = io::read_csv(pred).numbers(column);
    const auto r = io::read_csv(ref).numbers(column);
    const auto ccc = stats::lin_ccc(p, r);
    const auto fit = stats::linreg(r, p);
    std::cout << "ccc " << (ccc ? stats::format_number(*ccc) : "NA") << '\n';
    if (fit) {
        std::cout << "slope " << stats::format_number(fit->slope) << '\n'
                  << "intercept " << stats::format_number(fit->intercept) << '\n';
    }
}

void cmd_eval_cov(const std::string& image, const std::string& labels_path) {
    const ScalarGrid2D img = io::read_scalar(image);
    const LabelGrid2D labels = io::read_labels(labels_path);
    std::cout << "label,cov\n";
    for (int l : present_labels(labels)) {
        const auto c = stats::cov_metric(radiomics::masked_values(img, labels, l));
        std::cout << l << ',' << (c ? stats::format_number(*c) : "NA") << '\n';
    }
}

void cmd_eval_radiomics(const std::string& image, const std::string& labels_path, const std::string& case_id,
                        const std::string& out, const io::RunConfig& cfg) {
    const ScalarGrid2D img = io::read_scalar(image);
    const LabelGrid2D labels = io::read_labels(labels_path);
    std::ofstream file;
    if (!out.empty()) file = open_out(out);
    std::ostream& os = out.empty() ? std::cout : file;
    radiomics::GlcmConfig gc;
    gc.bin_count = cfg.eval.glcm_bins;
    bool header = true;
    for (int l : present_labels(labels)) {
        const LabelGrid2D mask = single_label(labels, l);
        radiomics::FeatureVector fv = radiomics::first_order(radiomics::masked_values(img, mask), gc.bin_count);
        const radiomics::FeatureVector glcm = radiomics::glcm_averaged(img, mask, gc);
        fv.entries.insert(fv.entries.end(), glcm.entries.begin(), glcm.entries.end());
        radiomics::write_feature_csv(os, case_id, "label_" + std::to_string(l), fv, header);
        header = false;
    }
}

std::vector<double> region_values(const std::string& image, const std::string& labels_path, int label) {
    const ScalarGrid2D img = io::read_scalar(image);
    if (labels_path.empty()) return {img.values.data(), img.values.data() + img.size()};
    return radiomics::masked_values(img, io::read_labels(labels_path), label);
}

void cmd_eval_js(const std::string& a, const std::string& b, const std::string& labels, int label) {
    std::cout << "js_distance " << stats::format_number(stats::js_distance(region_values(a, labels, label),
                                                                         region_values(b, labels, label)))
              << '\n';
}

void cmd_eval_tumor(const std::string& target, const std::string& synthetic, int n, std::uint64_t seed, double sbr,
                    double radius, const std::string& out, const io::RunConfig& cfg) {
    if (n < 1) throw InvalidParameter("--n must be >= 1");
    const ScalarGrid2D t = io::read_scalar(target);
    const ScalarGrid2D s = io::read_scalar(synthetic);
    require_same_shape(t.values, s.values, "tumor-task backgrounds");
    const auto margin = static_cast<Eigen::Index>(std::ceil(radius)) + 2;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> centres;
    for (Eigen::Index r = margin; r < t.height() - margin; ++r) {
        for (Eigen::Index c = margin; c < t.width() - margin; ++c) {
            if (t.values(r, c) > 0.0 && s.values(r, c) > 0.0) centres.emplace_back(r, c);
        }
    }
    if (centres.empty()) throw InvalidParameter("tumor-task: no admissible lesion centre");
    std::ofstream file;
    if (!out.empty()) file = open_out(out);
    if (file) file << "trial,dice_target,dice_synthetic,rvd_target,rvd_synthetic\n";
    std::vector<double> dt, ds, diff;
    Rng pick(seed);
    for (int k = 0; k < n; ++k) {
        const auto [r, c] = centres[std::uniform_int_distribution<std::size_t>(0, centres.size() - 1)(pick)];
        TumorSpec spec;
        spec.center_row = double(r);
        spec.center_col = double(c);
        spec.radius_major = radius;
        spec.radius_minor = radius * 0.8;
        spec.rotation = uniform01(pick) * 3.141592653589793;
        spec.sbr = sbr;
        Rng r1(mix_seed(seed, std::uint64_t(k))), r2(mix_seed(seed, std::uint64_t(k)));
        const InsertedTumor it = insert_tumor(t, spec, r1);
        const InsertedTumor is = insert_tumor(s, spec, r2);
        LabelGrid2D roi(t.height(), t.width());
        const Eigen::Index half = margin + 2;
        const Eigen::Index r0 = std::max<Eigen::Index>(0, r - half), c0 = std::max<Eigen::Index>(0, c - half);
        roi.labels.block(r0, c0, std::min(t.height() - r0, 2 * half + 1), std::min(t.width() - c0, 2 * half + 1))
            .setOnes();
        const LabelGrid2D st = threshold_segment(it.image, roi, cfg.eval.threshold_fraction);
        const LabelGrid2D ss = threshold_segment(is.image, roi, cfg.eval.threshold_fraction);
        dt.push_back(stats::dice(st, it.mask));
        ds.push_back(stats::dice(ss, is.mask));
        diff.push_back(ds.back() - dt.back());
        if (file) {
            const auto vt = stats::rvd(st, it.mask), vs = stats::rvd(ss, is.mask);
            file << k << ',' << stats::format_number(dt.back()) << ',' << stats::format_number(ds.back()) << ','
                 << (vt ? stats::format_number(*vt) : "NA") << ',' << (vs ? stats::format_number(*vs) : "NA") << '\n';
        }
    }
    std::cout << "dice_target " << stats::format_number(stats::mean(dt)) << '\n'
              << "dice_synthetic " << stats::format_number(stats::mean(ds)) << '\n';
    const auto w = stats::wilcoxon_signed_rank(diff);
    std::cout << "wilcoxon_p " << (w ? stats::format_number(w->p_value) : "NA") << '\n';
}

void cmd_schedule_dump(const std::string& kind, int T, const std::string& out) {
    const ScheduleSpec s = make_schedule(schedule_kind_from_string(kind), T);
    auto os = open_out(out);
    write_schedule_csv(os, s);
}

study::StudyServer* g_server = nullptr;

void cmd_study_serve(const std::string& manifest, const std::string& dir, const std::string& host, int port,
                     std::optional<std::uint64_t> seed) {
    std::random_device rd;
    const std::uint64_t token_seed = (std::uint64_t(rd()) << 32) ^ rd();
    study::StudyStore store(dir, token_seed);
    study::StudyServer server(store, study::load_manifest(manifest), seed.value_or(token_seed));
    const int bound = server.bind(host, port);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    std::cout << "listening on http://" << host << ':' << bound << std::endl;
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    server.listen();
    g_server = nullptr;
}

void cmd_study_report(const std::string& dir, const std::string& out) {
    const study::Summary s = study::summarize(study::replay_logs(dir));
    if (!out.empty()) {
        auto os = open_out(out);
        study::write_summary_csv(os, s);
    }
    study::write_summary_csv(std::cout, s);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"padkit: anatomy-conditioned PET synthesis toolkit"};
    app.require_subcommand(1);
    std::function<void()> action;
    std::string config_path;
    auto with_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Run configuration JSON")->check(CLI::ExistingFile);
    };

    // normalize
    std::string in, out;
    bool inverse = false;
    auto* normalize = app.add_subcommand("normalize", "SUV tensor to normalized tensor (or back with --inverse)");
    normalize->add_option("--in", in)->required();
    normalize->add_option("--out", out)->required();
    normalize->add_flag("--inverse", inverse);
    with_config(normalize);
    normalize->callback([&] { action = [&] { cmd_normalize(in, out, inverse, load_config(config_path)); }; });

    // build-map
    std::string labels, pet, stats_in, stats_out;
    auto* build = app.add_subcommand("build-map", "Uniform organ activity map from labels and PET or organ CSV");
    build->add_option("--labels", labels)->required();
    auto* pet_opt = build->add_option("--pet", pet);
    auto* stats_opt = build->add_option("--stats", stats_in);
    pet_opt->excludes(stats_opt);
    build->add_option("--out", out)->required();
    build->add_option("--stats-out", stats_out);
    build->callback([&] {
        if (pet.empty() == stats_in.empty()) throw CLI::ValidationError("build-map", "give exactly one of --pet, --stats");
        action = [&] { cmd_build_map(labels, pet, stats_in, out, stats_out); };
    });

    // phantoms
    int n = 0;
    std::optional<std::uint64_t> seed;
    auto* phantoms = app.add_subcommand("phantoms", "Synthetic phantom cohort");
    phantoms->add_option("--n", n)->required();
    phantoms->add_option("--seed", seed);
    phantoms->add_option("--out", out)->required();
    with_config(phantoms);
    phantoms->callback([&] {
        action = [&] {
            const auto cfg = load_config(config_path);
            cmd_phantoms(n, seed.value_or(cfg.phantoms.seed), out, cfg);
        };
    });

    // train
    std::string phase, data, trace;
    int iterations = -1;
    bool verbose = false;
    auto* train = app.add_subcommand("train", "Train one phase and write a checkpoint");
    train->add_option("--phase", phase)->required()->check(CLI::IsMember({"base", "super"}));
    train->add_option("--data", data, "Directory of phantom cases")->required();
    train->add_option("--out", out, "Checkpoint stem")->required();
    train->add_option("--iterations", iterations);
    train->add_option("--seed", seed);
    train->add_option("--trace", trace, "Loss trace CSV");
    train->add_flag("--verbose", verbose);
    with_config(train);
    train->callback([&] {
        action = [&] { cmd_train(phase, data, out, iterations, seed, trace, verbose, load_config(config_path)); };
    });

    // generate
    std::string base_ckpt, super_ckpt, map;
    auto* gen = app.add_subcommand("generate", "Generate a PET slice from a uniform map");
    gen->add_option("--base", base_ckpt)->required();
    gen->add_option("--super", super_ckpt)->required();
    gen->add_option("--map", map)->required();
    gen->add_option("--out", out)->required();
    gen->add_option("--seed", seed);
    with_config(gen);
    gen->callback([&] {
        action = [&] {
            const auto cfg = load_config(config_path);
            cmd_generate(base_ckpt, super_ckpt, map, out, seed.value_or(cfg.generate_seed), cfg);
        };
    });

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluation metrics");
    eval->require_subcommand(1);
    std::string pred, ref, column = "mean_suv", image, a, b, case_id = "case", target, synthetic;
    int label = 0;
    double sbr = 4.0, radius = 3.0;
    auto* ccc = eval->add_subcommand("ccc", "Lin's CCC between two CSV columns");
    ccc->add_option("--pred", pred)->required();
    ccc->add_option("--ref", ref)->required();
    ccc->add_option("--column", column);
    ccc->callback([&] { action = [&] { cmd_eval_ccc(pred, ref, column); }; });
    auto* cov = eval->add_subcommand("cov", "Per-organ coefficient of variation");
    cov->add_option("--image", image)->required();
    cov->add_option("--labels", labels)->required();
    cov->callback([&] { action = [&] { cmd_eval_cov(image, labels); }; });
    auto* rad = eval->add_subcommand("radiomics", "First-order and GLCM features per organ");
    rad->add_option("--image", image)->required();
    rad->add_option("--labels", labels)->required();
    rad->add_option("--case", case_id);
    rad->add_option("--out", out);
    with_config(rad);
    rad->callback([&] { action = [&] { cmd_eval_radiomics(image, labels, case_id, out, load_config(config_path)); }; });
    auto* js = eval->add_subcommand("js", "Jensen-Shannon distance between value distributions");
    js->add_option("--a", a)->required();
    js->add_option("--b", b)->required();
    js->add_option("--labels", labels);
    js->add_option("--label", label);
    js->callback([&] { action = [&] { cmd_eval_js(a, b, labels, label); }; });
    auto* tumor = eval->add_subcommand("tumor-task", "Paired lesion insertion and threshold segmentation");
    tumor->add_option("--target", target)->required();
    tumor->add_option("--synthetic", synthetic)->required();
    tumor->add_option("--n", n)->required();
    tumor->add_option("--seed", seed);
    tumor->add_option("--sbr", sbr);
    tumor->add_option("--radius", radius);
    tumor->add_option("--out", out);
    with_config(tumor);
    tumor->callback([&] {
        action = [&] { cmd_eval_tumor(target, synthetic, n, seed.value_or(0), sbr, radius, out, load_config(config_path)); };
    });

    // schedule-dump
    std::string kind;
    int T = 0;
    auto* sched = app.add_subcommand("schedule-dump", "Write a noise schedule as CSV");
    sched->add_option("--kind", kind)->required();
    sched->add_option("--T", T)->required();
    sched->add_option("--out", out)->required();
    sched->callback([&] { action = [&] { cmd_schedule_dump(kind, T, out); }; });

    // study
    auto* study_cmd = app.add_subcommand("study", "Observer study service");
    study_cmd->require_subcommand(1);
    std::string manifest, dir, host = "127.0.0.1";
    int port = 8080;
    auto* serve = study_cmd->add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--manifest", manifest)->required();
    serve->add_option("--dir", dir, "Session log directory")->required();
    serve->add_option("--host", host);
    serve->add_option("--port", port);
    serve->add_option("--seed", seed);
    serve->callback([&] { action = [&] { cmd_study_serve(manifest, dir, host, port, seed); }; });
    auto* report = study_cmd->add_subcommand("report", "Summarize session logs");
    report->add_option("--dir", dir)->required();
    report->add_option("--out", out);
    report->callback([&] { action = [&] { cmd_study_report(dir, out); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    try {
        if (action) action();
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
