// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace ssasc {

double TrainConfig::lr_at(std::int32_t epoch) const { return lr * std::pow(lr_decay, epoch); }

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (flip_probability < 0.0 || flip_probability > 1.0) throw std::invalid_argument("flip_probability outside [0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("betas outside [0, 1)");
}

std::vector<Sample> synthetic_dataset(const SynthConfig& config, std::uint64_t seed, std::int32_t first,
                                      std::int32_t count) {
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (std::int32_t i = first; i < first + count; ++i) {
        auto scene = generate_synthetic_scene(stream_seed(seed, {static_cast<std::uint64_t>(i)}), config);
        out.push_back({fmt::format("{:06d}", i), std::move(scene.cloud), std::move(scene.grid), std::move(scene.invalid),
                       std::move(scene.point_labels)});
    }
    return out;
}

std::vector<Sample> load_dataset(const std::filesystem::path& root, const GridSpec& grid, const LabelMap& map,
                                 std::int32_t class_count) {
    namespace fs = std::filesystem;
    const auto scans = root / "velodyne";
    if (!fs::is_directory(scans)) throw IoError(fmt::format("'{}' has no velodyne/ directory", root.string()));
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(scans)) {
        if (entry.path().extension() == ".bin") stems.push_back(entry.path().stem().string());
    }
    std::sort(stems.begin(), stems.end());
    const Extents3 e = grid.extents();
    std::vector<Sample> out;
    for (const auto& stem : stems) {
        Sample s;
        s.name = stem;
        s.cloud = read_scan(scans / (stem + ".bin"));
        s.grid = read_voxel_labels(root / "voxels" / (stem + ".label"), e, map, class_count);
        const auto mask = root / "voxels" / (stem + ".invalid");
        s.invalid = fs::exists(mask) ? read_invalid_mask(mask, e) : VoxelMask(e);
        const auto point_file = root / "labels" / (stem + ".label");
        if (fs::exists(point_file)) {
            std::ifstream in(point_file, std::ios::binary);
            std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            if (bytes.size() != s.cloud.size() * 4) {
                throw IoError(fmt::format("'{}': expected {} bytes of point labels, found {}", point_file.string(),
                                          s.cloud.size() * 4, bytes.size()));
            }
            s.point_labels.resize(s.cloud.size());
            for (std::size_t i = 0; i < s.cloud.size(); ++i) {
                const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
                const auto raw = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
                s.point_labels[i] = map.to_train(raw);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

void adam_step(ParameterSet& params, AdamState& state, double lr, const TrainConfig& config) {
    auto& ps = params.parameters();
    if (state.m.empty()) {
        for (const auto& p : ps) {
            state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
            state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
        }
    }
    if (state.m.size() != ps.size()) throw std::logic_error("optimizer state does not match the parameter registry");
    for (const auto& p : ps) {
        if (!p.tensor.has_grad()) throw MissingGradientError(fmt::format("parameter '{}' has no gradient", p.name));
    }
    ++state.step;
    const double b1 = config.beta1;
    const double b2 = config.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < ps.size(); ++k) {
        Tensor t = ps[k].tensor;
        auto w = t.mutable_values();
        const auto g = t.grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + config.epsilon);
        }
    }
}

void flip_scene(Sample& sample, const GridSpec& grid, bool flip_x, bool flip_y) {
    if (!flip_x && !flip_y) return;
    const double sx = grid.range_min[0] + grid.range_max[0];
    const double sy = grid.range_min[1] + grid.range_max[1];
    for (auto& p : sample.cloud.points) {
        if (flip_x) p.x = sx - p.x;
        if (flip_y) p.y = sy - p.y;
    }
    auto flip_grid = [&](auto& labels, const Extents3& e) {
        auto copy = labels;
        for (std::int32_t x = 0; x < e.x; ++x) {
            for (std::int32_t y = 0; y < e.y; ++y) {
                const std::int32_t fx = flip_x ? e.x - 1 - x : x;
                const std::int32_t fy = flip_y ? e.y - 1 - y : y;
                for (std::int32_t z = 0; z < e.z; ++z) {
                    labels[(static_cast<std::size_t>(fx) * e.y + fy) * e.z + z] =
                        copy[(static_cast<std::size_t>(x) * e.y + y) * e.z + z];
                }
            }
        }
    };
    flip_grid(sample.grid.labels, sample.grid.extents);
    if (!sample.invalid.bits.empty()) flip_grid(sample.invalid.bits, sample.invalid.extents);
}

void augment_flip(Sample& sample, const GridSpec& grid, Rng& rng, double probability) {
    std::bernoulli_distribution coin(probability);
    const bool fx = coin(rng);
    const bool fy = coin(rng);
    flip_scene(sample, grid, fx, fy);
}

std::string EpochLog::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["lr"] = lr;
    j["loss_total"] = loss_total;
    j["loss_com"] = loss_com;
    j["loss_seg"] = loss_seg;
    j["com_ce"] = com_ce;
    j["com_lovasz"] = com_lovasz;
    j["seg_ce"] = seg_ce;
    j["seg_lovasz"] = seg_lovasz;
    auto put = [&](const char* key, const std::optional<Metrics>& m) {
        if (!m) return;
        j[key] = {{"iou", m->iou}, {"precision", m->precision}, {"recall", m->recall}, {"miou", m->miou},
                  {"class_iou", m->class_iou}};
    };
    put("val", val);
    put("train", train);
    j["seconds"] = seconds;
    return j.dump();
}

Metrics evaluate_model(const SsaScModel& model, const std::vector<Sample>& samples, bool skip_absent) {
    ConfusionMatrix cm(model.config().class_count);
    for (const auto& s : samples) cm.add(model.forward_infer(s.cloud), s.grid, &s.invalid);
    return compute_metrics(cm, skip_absent);
}

TrainResult train(SsaScModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (train_set.empty()) throw std::invalid_argument("training set is empty");
    const auto& mc = model.config();
    if (config.loss.segmentation && !mc.segmentation_decoder) {
        throw std::invalid_argument("segmentation loss needs model.segmentation_decoder");
    }
    if (!config.loss.segmentation && mc.segmentation_decoder) {
        throw std::invalid_argument("segmentation decoder has no supervision; enable the loss or drop the decoder");
    }
    if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

    auto& params = model.parameters();
    AdamState state;
    TrainResult result;
    const auto batch = static_cast<std::size_t>(config.batch_size);

    for (std::int32_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = epoch;
        log.lr = config.lr_at(epoch);

        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(stream_seed(config.seed, {0x5eed, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        std::int32_t step = 0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            const double inv = 1.0 / static_cast<double>(end - start);
            params.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const auto idx = order[b];
                Sample s = train_set[idx];
                if (config.augment) {
                    Rng rng(stream_seed(config.seed, {static_cast<std::uint64_t>(epoch), idx}));
                    augment_flip(s, mc.grid, rng, config.flip_probability);
                }
                Tape tape;
                TapeScope scope(tape);
                const auto out = config.loss.segmentation ? model.forward_train(s.cloud, Mode::Train)
                                                          : model.forward_completion(s.cloud, Mode::Train);
                std::vector<std::int32_t> seg_targets;
                if (config.loss.segmentation) {
                    seg_targets = s.point_labels.empty()
                                      ? std::vector<std::int32_t>(out.assignment.voxels.size(), kIgnoreIndex)
                                      : segmentation_targets(s.point_labels, out.assignment);
                }
                const auto rep = total_loss(out.completion, s.grid, &s.invalid, out.segmentation, seg_targets, config.loss);
                if (!std::isfinite(rep.loss_total)) {
                    throw DivergenceError(fmt::format(
                        "non-finite loss at epoch {} step {} scene '{}': total {} com {} (ce {}, lovasz {}) seg {} (ce {}, lovasz {})",
                        epoch, step, s.name, rep.loss_total, rep.loss_com, rep.com_ce, rep.com_lovasz, rep.loss_seg,
                        rep.seg_ce, rep.seg_lovasz));
                }
                tape.backward(ops::scale(rep.total, inv));
                batch_loss += rep.loss_total * inv;
                log.loss_total += rep.loss_total;
                log.loss_com += rep.loss_com;
                log.loss_seg += rep.loss_seg;
                log.com_ce += rep.com_ce;
                log.com_lovasz += rep.com_lovasz;
                log.seg_ce += rep.seg_ce;
                log.seg_lovasz += rep.seg_lovasz;
                ++seen;
            }
            adam_step(params, state, log.lr, config);
            if (options.on_step) options.on_step(epoch, step, batch_loss);
            ++step;
        }
        const double n = static_cast<double>(seen);
        for (double* v : {&log.loss_total, &log.loss_com, &log.loss_seg, &log.com_ce, &log.com_lovasz, &log.seg_ce,
                          &log.seg_lovasz}) {
            *v /= n;
        }

        const bool last = epoch + 1 == config.epochs;
        auto due = [&](std::int32_t every) { return last || (every > 0 && (epoch + 1) % every == 0); };
        if (!val_set.empty() && due(config.validate_every)) log.val = evaluate_model(model, val_set, config.skip_absent);
        if (due(config.train_metrics_every)) log.train = evaluate_model(model, train_set, config.skip_absent);
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (log.val && (!result.best_val || log.val->miou > result.best_val->miou)) {
            result.best_val = log.val;
            result.best_epoch = epoch;
            if (options.out_dir) save_checkpoint(model, *options.out_dir / "best.ckpt");
        }
        if (options.log) *options.log << log.to_json() << '\n' << std::flush;
        result.epochs.push_back(std::move(log));
    }
    if (options.out_dir) {
        save_checkpoint(model, *options.out_dir / "final.ckpt");
        if (!result.best_val) save_checkpoint(model, *options.out_dir / "best.ckpt");
    }
    return result;
}

}  // namespace ssasc
