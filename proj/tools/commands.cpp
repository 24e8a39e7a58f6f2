// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "commands.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ssasc/metrics.hpp"
#include "ssasc/rng.hpp"

namespace ssasc::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Error lines must stay single-line for grepping.
std::string one_line(std::string s) {
    for (auto& ch : s) {
        if (ch == '\n' || ch == '\r') ch = ' ';
    }
    return s;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

class UsageError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string ablation;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--set", args.overrides, "section.key=value override (repeatable)")->take_all();
    sub->add_option("--seed", args.seed, "Seed for model init, training and synthetic data");
    sub->add_option("--ablation", args.ablation, "Ablation preset")->check(CLI::IsMember(ablation_names()));
}

RunConfig resolve(const CommonArgs& args) {
    RunConfig c = args.config.empty() ? RunConfig{} : load_config(args.config);
    if (!args.ablation.empty()) apply_ablation(c, args.ablation);
    for (const auto& o : args.overrides) apply_override(c, o);
    if (args.seed) {
        c.model.seed = *args.seed;
        c.train.seed = *args.seed;
        c.data.seed = *args.seed;
    }
    c.finalize();
    return c;
}

void print_config(const RunConfig& c, std::ostream& out) {
    std::istringstream in(to_ini(c));
    out << "# resolved config\n";
    for (std::string line; std::getline(in, line);) out << "# " << line << '\n';
}

void write_point_labels(const fs::path& path, const std::vector<std::uint8_t>& labels, const LabelMap& map) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    for (auto l : labels) {
        const std::uint32_t raw = map.to_raw(l);
        const unsigned char b[4] = {static_cast<unsigned char>(raw), static_cast<unsigned char>(raw >> 8),
                                    static_cast<unsigned char>(raw >> 16), static_cast<unsigned char>(raw >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    if (!out) throw IoError(fmt::format("write failed on '{}'", path.string()));
}

std::vector<Sample> dataset(const RunConfig& c, bool validation) {
    if (c.data.root.empty()) {
        return validation ? synthetic_dataset(c.synth, c.data.seed, c.data.train_scenes, c.data.val_scenes)
                          : synthetic_dataset(c.synth, c.data.seed, 0, c.data.train_scenes);
    }
    if (validation) {
        if (c.data.val_root.empty()) return {};
        return load_dataset(c.data.val_root, c.model.grid, c.labels, c.model.class_count);
    }
    return load_dataset(c.data.root, c.model.grid, c.labels, c.model.class_count);
}

// ---------------------------------------------------------------------------

int cmd_train(const CommonArgs& args, const std::string& out_dir, const std::string& init, std::ostream& out) {
    const RunConfig c = resolve(args);
    print_config(c, out);
    const auto train_set = dataset(c, false);
    const auto val_set = dataset(c, true);
    if (train_set.empty()) throw IoError("training set is empty");
    SsaScModel model(c.model);
    if (!init.empty()) load_checkpoint_into(model, init);
    TrainOptions opts;
    std::ofstream log_file;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "config.ini") << to_ini(c);
        opts.out_dir = out_dir;
        log_file.open(fs::path(out_dir) / "train_log.jsonl", std::ios::trunc);
    }
    // Tee each record to stdout and the log file.
    struct Tee : std::streambuf {
        std::ostream* a;
        std::ostream* b;
        int overflow(int ch) override {
            if (ch == EOF) return 0;
            a->put(static_cast<char>(ch));
            if (b) b->put(static_cast<char>(ch));
            return ch;
        }
    } tee;
    tee.a = &out;
    tee.b = log_file.is_open() ? &log_file : nullptr;
    std::ostream log(&tee);
    opts.log = &log;
    const auto result = train(model, train_set, val_set, c.train, opts);
    log.flush();
    if (result.best_val) {
        out << fmt::format("# best validation epoch {}\n", result.best_epoch) << metrics_table(*result.best_val);
    }
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& pred_dir, const std::string& truth_dir,
             const std::string& checkpoint, std::ostream& out) {
    const RunConfig c = resolve(args);
    print_config(c, out);
    const bool skip_absent = c.train.skip_absent;
    if (!checkpoint.empty()) {
        const auto model = load_checkpoint(checkpoint);
        if (!(model->config().grid == c.model.grid) || model->config().class_count != c.model.class_count) {
            throw ConfigError("checkpoint grid or class count differs from the config");
        }
        auto samples = dataset(c, true);
        if (samples.empty()) samples = dataset(c, false);
        ConfusionMatrix total(c.model.class_count);
        for (const auto& s : samples) {
            ConfusionMatrix cm(c.model.class_count);
            cm.add(model->forward_infer(s.cloud), s.grid, &s.invalid);
            out << metrics_record(compute_metrics(cm, skip_absent), s.name) << '\n';
            total += cm;
        }
        out << metrics_table(compute_metrics(total, skip_absent));
        return 0;
    }
    if (pred_dir.empty() || truth_dir.empty()) throw UsageError("eval needs --pred and --truth, or --checkpoint");
    auto stems_in = [](const fs::path& dir) {
        if (!fs::is_directory(dir)) throw IoError(fmt::format("'{}' is not a directory", dir.string()));
        std::set<std::string> stems;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.path().extension() == ".label") stems.insert(e.path().stem().string());
        }
        return stems;
    };
    const auto pred = stems_in(pred_dir);
    const auto truth = stems_in(truth_dir);
    std::vector<std::string> missing;
    for (const auto& s : pred) {
        if (!truth.count(s)) missing.push_back(s + " (no truth)");
    }
    for (const auto& s : truth) {
        if (!pred.count(s)) missing.push_back(s + " (no prediction)");
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw IoError(fmt::format("unpaired scenes: {}", list));
    }
    if (pred.empty()) throw IoError("no .label files to compare");
    const auto e = c.model.grid.extents();
    const auto C = c.model.class_count;
    ConfusionMatrix total(C);
    for (const auto& stem : pred) {
        const auto p = read_voxel_labels(fs::path(pred_dir) / (stem + ".label"), e, c.labels, C);
        const auto t = read_voxel_labels(fs::path(truth_dir) / (stem + ".label"), e, c.labels, C);
        const auto mask_path = fs::path(truth_dir) / (stem + ".invalid");
        const VoxelMask mask = fs::exists(mask_path) ? read_invalid_mask(mask_path, e) : VoxelMask(e);
        ConfusionMatrix cm(C);
        cm.add(p, t, &mask);
        out << metrics_record(compute_metrics(cm, skip_absent), stem) << '\n';
        total += cm;
    }
    out << metrics_table(compute_metrics(total, skip_absent));
    return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& checkpoint, const std::string& scan,
              const std::string& out_path, std::int32_t warmup, std::int32_t runs, std::ostream& out) {
    const RunConfig c = resolve(args);
    print_config(c, out);
    if (runs < 10) throw UsageError("--runs must be at least 10");
    if (warmup < 3) throw UsageError("--warmup must be at least 3");
    const auto model = load_checkpoint(checkpoint);
    if (!(model->config().grid == c.model.grid) || model->config().class_count != c.model.class_count) {
        const auto a = model->config().grid.extents();
        const auto b = c.model.grid.extents();
        throw ConfigError(fmt::format("checkpoint expects a {}x{}x{} grid with {} classes; the config has {}x{}x{} with {}",
                                      a.x, a.y, a.z, model->config().class_count, b.x, b.y, b.z, c.model.class_count));
    }
    PointCloud cloud;
    std::string source;
    if (!scan.empty()) {
        cloud = read_scan(scan);
        source = scan;
    } else {
        cloud = synthetic_dataset(c.synth, c.data.seed, 0, 1).front().cloud;
        source = fmt::format("synthetic seed {}", c.data.seed);
    }
    const auto pred = model->forward_infer(cloud);
    write_voxel_labels(out_path, pred, c.labels);
    const auto lat = time_inference(*model, cloud, warmup, runs);
    nlohmann::ordered_json j;
    j["source"] = source;
    j["points"] = cloud.size();
    j["occupied"] = pred.occupied_count();
    j["out"] = out_path;
    j["latency_ms_median"] = lat.median_ms;
    j["latency_ms_min"] = lat.min_ms;
    j["latency_ms_max"] = lat.max_ms;
    j["runs"] = lat.runs;
    j["warmup"] = warmup;
    j["peak_rss_kib"] = peak_rss_kib();
    out << j.dump() << '\n';
    return 0;
}

int cmd_synth(const CommonArgs& args, const std::string& out_dir, std::int32_t first, std::int32_t count,
              std::ostream& out) {
    const RunConfig c = resolve(args);
    print_config(c, out);
    if (out_dir.empty()) throw UsageError("synth needs --out DIR");
    if (count < 1) throw UsageError("--count must be positive");
    for (const char* sub : {"velodyne", "voxels", "labels"}) fs::create_directories(fs::path(out_dir) / sub);
    const auto samples = synthetic_dataset(c.synth, c.data.seed, first, count);
    for (const auto& s : samples) {
        write_scan(fs::path(out_dir) / "velodyne" / (s.name + ".bin"), s.cloud);
        write_voxel_labels(fs::path(out_dir) / "voxels" / (s.name + ".label"), s.grid, c.labels);
        write_invalid_mask(fs::path(out_dir) / "voxels" / (s.name + ".invalid"), s.invalid);
        write_point_labels(fs::path(out_dir) / "labels" / (s.name + ".label"), s.point_labels, c.labels);
        out << fmt::format("{{\"scene\":\"{}\",\"points\":{},\"occupied\":{}}}\n", s.name, s.cloud.size(),
                           s.grid.occupied_count());
    }
    return 0;
}

int cmd_export(const CommonArgs& args, const std::string& grid_path, const std::string& out_path,
               const std::string& palette_arg, std::ostream& out) {
    const RunConfig c = resolve(args);
    print_config(c, out);
    std::string palette_text = palette_arg.empty() ? c.palette : palette_arg;
    if (!palette_text.empty() && fs::is_regular_file(palette_text)) {
        std::ifstream in(palette_text);
        std::stringstream buf;
        buf << in.rdbuf();
        palette_text = buf.str();
    }
    const Palette palette = palette_text.empty() ? default_palette() : parse_palette(palette_text);
    const auto grid = read_voxel_labels(grid_path, c.model.grid.extents(), c.labels, c.model.class_count);
    std::ofstream file(out_path, std::ios::trunc);
    if (!file) throw IoError(fmt::format("cannot open '{}' for writing", out_path));
    const auto n = export_grid(grid, palette, file);
    if (!file) throw IoError(fmt::format("write failed on '{}'", out_path));
    out << fmt::format("{{\"out\":\"{}\",\"voxels\":{}}}\n", out_path, n);
    return 0;
}

int cmd_bench(const CommonArgs& args, const std::string& out_path, const BenchOptions& bo, std::ostream& out) {
    const RunConfig c = resolve(args);
    print_config(c, out);
    const auto report = bench_report(c, bo);
    if (!out_path.empty()) {
        std::ofstream file(out_path, std::ios::trunc);
        if (!file) throw IoError(fmt::format("cannot open '{}' for writing", out_path));
        file << report.dump(2) << '\n';
    }
    out << report.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// Bench helpers

SparseVoxelTensor random_sparse(Rng& rng, std::int64_t active, double density, std::int64_t channels) {
    const auto side = static_cast<std::int32_t>(std::ceil(std::cbrt(static_cast<double>(active) / density)));
    const Extents3 lattice{side, side, side};
    std::vector<std::int64_t> cells(static_cast<std::size_t>(lattice.volume()));
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    cells.resize(static_cast<std::size_t>(active));
    std::sort(cells.begin(), cells.end());
    std::vector<Coord> coords;
    std::vector<std::vector<double>> feats;
    for (auto id : cells) {
        coords.push_back({static_cast<std::int32_t>(id / (side * side)), static_cast<std::int32_t>((id / side) % side),
                          static_cast<std::int32_t>(id % side)});
        std::vector<double> f(static_cast<std::size_t>(channels));
        for (auto& v : f) v = uniform(rng, -1.0, 1.0);
        feats.push_back(std::move(f));
    }
    return sparse_from_points(std::move(coords), feats, lattice);
}

std::int64_t conv_macs(const SparseVoxelTensor& x, const SparseConv3dLayer& layer) {
    return x.coord_set().submanifold_rulebook(layer.options.kernel)->pair_count() * layer.in_ch * layer.out_ch;
}

template <class F>
double time_median(std::int32_t repeats, F&& f) {
    std::vector<double> t;
    f();
    for (std::int32_t i = 0; i < repeats; ++i) {
        const auto t0 = Clock::now();
        f();
        t.push_back(ms_since(t0));
    }
    return median(std::move(t));
}

}  // namespace

// ---------------------------------------------------------------------------

Palette default_palette() {
    // Distinct colors for the first 20 classes; cycled beyond that.
    static const std::array<Rgb, 20> base{{{0, 0, 0},       {245, 150, 100}, {245, 230, 100}, {150, 60, 30},
                                           {180, 30, 80},   {255, 0, 0},     {30, 30, 255},   {200, 40, 255},
                                           {90, 30, 150},   {255, 0, 255},   {255, 150, 255}, {75, 0, 75},
                                           {75, 0, 175},    {0, 200, 255},   {50, 120, 255},  {0, 175, 0},
                                           {0, 60, 135},    {80, 240, 150},  {150, 240, 255}, {0, 0, 255}}};
    Palette p;
    for (int c = 0; c < 256; ++c) p[c] = base[static_cast<std::size_t>(c) % base.size()];
    return p;
}

Palette parse_palette(const std::string& text) {
    Palette p = default_palette();
    std::string cleaned = text;
    for (auto& ch : cleaned) {
        if (ch == ':' || ch == ',') ch = ' ';
    }
    std::istringstream in(cleaned);
    int cls = 0;
    int count = 0;
    while (in >> cls) {
        Rgb rgb{};
        if (!(in >> rgb[0] >> rgb[1] >> rgb[2])) throw ConfigError(fmt::format("palette entry for class {} is incomplete", cls));
        for (int v : rgb) {
            if (v < 0 || v > 255) throw ConfigError(fmt::format("palette color {} for class {} is out of 0..255", v, cls));
        }
        if (cls < 0 || cls > 255) throw ConfigError(fmt::format("palette class {} is out of 0..255", cls));
        p[cls] = rgb;
        ++count;
    }
    if (!in.eof()) throw ConfigError("palette text is malformed");
    if (count == 0) throw ConfigError("palette is empty");
    return p;
}

std::size_t export_grid(const SceneLabelGrid& grid, const Palette& palette, std::ostream& out) {
    std::size_t n = 0;
    const auto& e = grid.extents;
    for (std::int32_t x = 0; x < e.x; ++x) {
        for (std::int32_t y = 0; y < e.y; ++y) {
            for (std::int32_t z = 0; z < e.z; ++z) {
                const auto l = grid.at(x, y, z);
                if (l == kEmptyLabel || l == kInvalidLabel) continue;
                const auto it = palette.find(l);
                const Rgb rgb = it == palette.end() ? Rgb{255, 255, 255} : it->second;
                out << x << ' ' << y << ' ' << z << ' ' << rgb[0] << ' ' << rgb[1] << ' ' << rgb[2] << ' '
                    << static_cast<int>(l) << '\n';
                ++n;
            }
        }
    }
    return n;
}

Latency time_inference(const SsaScModel& model, const PointCloud& cloud, std::int32_t warmup, std::int32_t runs) {
    for (std::int32_t i = 0; i < warmup; ++i) (void)model.forward_infer(cloud);
    std::vector<double> t;
    for (std::int32_t i = 0; i < runs; ++i) {
        const auto t0 = Clock::now();
        (void)model.forward_infer(cloud);
        t.push_back(ms_since(t0));
    }
    Latency l;
    l.runs = runs;
    if (!t.empty()) {
        l.min_ms = *std::min_element(t.begin(), t.end());
        l.max_ms = *std::max_element(t.begin(), t.end());
        l.median_ms = median(t);
    }
    return l;
}

long peak_rss_kib() {
    std::ifstream in("/proc/self/status");
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("VmHWM:", 0) == 0) {
            std::istringstream s(line.substr(6));
            long v = -1;
            s >> v;
            return v;
        }
    }
    return -1;
}

nlohmann::ordered_json bench_report(const RunConfig& config, const BenchOptions& bo) {
    nlohmann::ordered_json report;
    const std::int64_t ch = bo.channels;
    Rng rng(stream_seed(bo.seed, {0xbe, 0}));
    ParameterSet params;
    SparseConvOptions asym_x{SparseConvMode::Submanifold, {3, 1, 3}, false};
    SparseConvOptions asym_y{SparseConvMode::Submanifold, {1, 3, 3}, false};
    SparseConvOptions full{SparseConvMode::Submanifold, {3, 3, 3}, false};
    const SparseConv3dLayer ax(params, "bench.ax", ch, ch, rng, asym_x);
    const SparseConv3dLayer ay(params, "bench.ay", ch, ch, rng, asym_y);
    const SparseConv3dLayer f1(params, "bench.f1", ch, ch, rng, full);
    const SparseConv3dLayer f2(params, "bench.f2", ch, ch, rng, full);
    const AsymResidualBlock block(params, "bench.block", ch, rng);

    const auto pair_params = ax.kernel_weight_count() + ay.kernel_weight_count();
    const auto full_params = f1.kernel_weight_count();
    const auto block_params = block.kernel_weight_count();
    const auto dual_params = f1.kernel_weight_count() + f2.kernel_weight_count();

    const auto x = random_sparse(rng, bo.sweep.empty() ? 1000 : bo.sweep.back(), 0.1, ch);
    auto& asym = report["asymmetric_vs_full"];
    asym["channels"] = ch;
    asym["active_voxels"] = x.size();
    asym["pair_params"] = pair_params;
    asym["full_params"] = full_params;
    asym["pair_over_full"] = static_cast<double>(pair_params) / static_cast<double>(full_params);
    asym["block_params"] = block_params;
    asym["dual_full_params"] = dual_params;
    asym["param_ratio"] = static_cast<double>(block_params) / static_cast<double>(dual_params);
    const auto pair_macs = conv_macs(x, ax) + conv_macs(x, ay);
    const auto full_macs = conv_macs(x, f1);
    asym["pair_macs"] = pair_macs;
    asym["full_macs"] = full_macs;
    asym["block_macs"] = 2 * pair_macs;
    // Per-voxel MACs with every neighbour active; sparse counts above depend
    // on density because the center tap always fires.
    asym["pair_macs_per_voxel_dense"] = (ax.options.kernel.taps() + ay.options.kernel.taps()) * ch * ch;
    asym["full_macs_per_voxel_dense"] = f1.options.kernel.taps() * ch * ch;
    asym["dual_full_macs"] = 2 * full_macs;
    asym["pair_ms"] = time_median(bo.repeats, [&] { (void)ay.forward(ax.forward(x, Mode::Eval), Mode::Eval); });
    asym["full_ms"] = time_median(bo.repeats, [&] { (void)f1.forward(x, Mode::Eval); });
    asym["block_ms"] = time_median(bo.repeats, [&] { (void)block.forward(x, Mode::Eval); });
    asym["dual_full_ms"] = time_median(bo.repeats, [&] { (void)f2.forward(f1.forward(x, Mode::Eval), Mode::Eval); });

    // MACs of a 3x3x3 submanifold conv at fixed density, active count swept.
    auto& sweep = report["mac_sweep"];
    sweep["density"] = 0.1;
    std::vector<double> ks;
    std::vector<double> macs;
    for (auto k : bo.sweep) {
        const auto xs = random_sparse(rng, k, 0.1, ch);
        const auto m = conv_macs(xs, f1);
        nlohmann::ordered_json row;
        row["active"] = k;
        row["macs"] = m;
        row["ms"] = time_median(bo.repeats, [&] { (void)f1.forward(xs, Mode::Eval); });
        sweep["points"].push_back(row);
        ks.push_back(static_cast<double>(k));
        macs.push_back(static_cast<double>(m));
    }
    {
        const double n = static_cast<double>(ks.size());
        const double mk = std::accumulate(ks.begin(), ks.end(), 0.0) / n;
        const double mm = std::accumulate(macs.begin(), macs.end(), 0.0) / n;
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            sxy += (ks[i] - mk) * (macs[i] - mm);
            sxx += (ks[i] - mk) * (ks[i] - mk);
            syy += (macs[i] - mm) * (macs[i] - mm);
        }
        const double slope = sxx > 0 ? sxy / sxx : 0.0;
        sweep["slope"] = slope;
        sweep["intercept"] = mm - slope * mk;
        sweep["r2"] = sxx > 0 && syy > 0 ? sxy * sxy / (sxx * syy) : 1.0;
    }

    // Dense 2D conv at the bird's-eye resolution of the configured grid.
    {
        const auto e = config.model.grid.extents();
        const auto cin = config.model.feature_dim;
        const auto cout = config.model.widths_2d[0];
        const Conv2dLayer conv(params, "bench.conv2d", cin, cout, rng);
        std::vector<double> v(static_cast<std::size_t>(cin * e.x * e.y));
        for (auto& a : v) a = uniform(rng, -1.0, 1.0);
        const Tensor in = make_tensor({cin, e.x, e.y}, std::move(v));
        auto& c2 = report["conv2d"];
        c2["shape"] = {cin, e.x, e.y};
        c2["out_channels"] = cout;
        c2["macs"] = static_cast<std::int64_t>(e.x) * e.y * cin * cout * 9;
        c2["ms"] = time_median(bo.repeats, [&] { (void)conv.forward(in, Mode::Eval); });
    }

    // Voxel assignment of a synthetic scan.
    {
        const auto scene = synthetic_dataset(config.synth, bo.seed, 0, 1).front();
        auto& vx = report["voxelizer"];
        vx["points"] = scene.cloud.size();
        std::size_t occupied = 0;
        vx["ms"] = time_median(bo.repeats,
                               [&] { occupied = assign_voxels(scene.cloud, config.model.grid).voxels.size(); });
        vx["occupied_voxels"] = occupied;
    }
    return report;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semantic scene completion from a single LiDAR scan", "ssasc"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    CommonArgs common;
    std::string out_path, checkpoint, scan, pred_dir, truth_dir, grid_path, palette;
    std::int32_t warmup = 3, runs = 10, count = 1, first = 0;
    BenchOptions bench;

    auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints");
    add_common(train_cmd, common);
    train_cmd->add_option("--out", out_path, "Output directory for checkpoints and the log");
    train_cmd->add_option("--checkpoint", checkpoint, "Initial weights")->check(CLI::ExistingFile);

    auto* eval_cmd = app.add_subcommand("eval", "Score predicted label grids against ground truth");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--pred", pred_dir, "Directory of predicted <stem>.label files");
    eval_cmd->add_option("--truth", truth_dir, "Directory of ground-truth <stem>.label (and .invalid) files");
    eval_cmd->add_option("--checkpoint", checkpoint, "Evaluate a checkpoint on the configured dataset")
        ->check(CLI::ExistingFile);

    auto* infer_cmd = app.add_subcommand("infer", "Predict a completed label grid for one scan");
    add_common(infer_cmd, common);
    infer_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--scan", scan, "Point cloud (.bin); a synthetic scan when omitted")
        ->check(CLI::ExistingFile);
    infer_cmd->add_option("--out", out_path, "Output .label file")->required();
    infer_cmd->add_option("--warmup", warmup, "Untimed runs before timing");
    infer_cmd->add_option("--runs", runs, "Timed runs");

    auto* bench_cmd = app.add_subcommand("bench", "Op-level timing report as JSON");
    add_common(bench_cmd, common);
    bench_cmd->add_option("--out", out_path, "Also write the JSON report here");
    bench_cmd->add_option("--channels", bench.channels, "Channels of the sparse conv comparison");
    bench_cmd->add_option("--repeats", bench.repeats, "Timed repeats per measurement");

    auto* synth_cmd = app.add_subcommand("synth", "Write synthetic scenes in the dataset layout");
    add_common(synth_cmd, common);
    synth_cmd->add_option("--out", out_path, "Dataset root")->required();
    synth_cmd->add_option("--count", count, "Number of scenes");
    synth_cmd->add_option("--first", first, "Index of the first scene");

    auto* export_cmd = app.add_subcommand("export", "Write a label grid as an ASCII point list");
    add_common(export_cmd, common);
    export_cmd->add_option("--grid", grid_path, "Label grid file")->required()->check(CLI::ExistingFile);
    export_cmd->add_option("--out", out_path, "Output text file")->required();
    export_cmd->add_option("--palette", palette, "Palette text ('class:r,g,b ...') or a file holding it");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << fmt::format("error: UsageError: {}\n", one_line(e.what()));
        return 2;
    }

    try {
        if (*train_cmd) return cmd_train(common, out_path, checkpoint, out);
        if (*eval_cmd) return cmd_eval(common, pred_dir, truth_dir, checkpoint, out);
        if (*infer_cmd) return cmd_infer(common, checkpoint, scan, out_path, warmup, runs, out);
        if (*bench_cmd) {
            bench.seed = common.seed.value_or(0);
            return cmd_bench(common, out_path, bench, out);
        }
        if (*synth_cmd) return cmd_synth(common, out_path, first, count, out);
        if (*export_cmd) return cmd_export(common, grid_path, out_path, palette, out);
    } catch (const UsageError& e) {
        err << fmt::format("error: UsageError: {}\n", one_line(e.what()));
        return 2;
    } catch (const ConfigError& e) {
        err << fmt::format("error: ConfigError: {}\n", one_line(e.what()));
        return 3;
    } catch (const IoError& e) {
        err << fmt::format("error: IoError: {}\n", one_line(e.what()));
        return 4;
    } catch (const CheckpointError& e) {
        err << fmt::format("error: CheckpointError: {}\n", one_line(e.what()));
        return 5;
    } catch (const DivergenceError& e) {
        err << fmt::format("error: DivergenceError: {}\n", one_line(e.what()));
        return 6;
    } catch (const fs::filesystem_error& e) {
        err << fmt::format("error: IoError: {}\n", one_line(e.what()));
        return 4;
    } catch (const std::invalid_argument& e) {
        err << fmt::format("error: InvalidArgument: {}\n", one_line(e.what()));
        return 3;
    } catch (const std::exception& e) {
        err << fmt::format("error: RuntimeError: {}\n", one_line(e.what()));
        return 1;
    }
    return 2;
}

}  // namespace ssasc::cli
