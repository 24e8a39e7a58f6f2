// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace ssasc {

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream in(cleaned);
    std::vector<std::string> out;
    std::string item;
    while (in >> item) out.push_back(item);
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    const auto s = trim(text);
    T v{};
    const auto* first = s.data();
    const auto* last = s.data() + s.size();
    std::from_chars_result r{};
    if constexpr (std::is_floating_point_v<T>) {
        r = std::from_chars(first, last, v);
    } else {
        r = std::from_chars(first, last, v, 10);
    }
    if (s.empty() || r.ec != std::errc{} || r.ptr != last) {
        throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", key, text));
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    auto s = trim(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(fmt::format("{}: cannot parse '{}' as a boolean", key, text));
}

template <class T, std::size_t N>
std::array<T, N> parse_array(const std::string& key, const std::string& text) {
    const auto items = split_list(text);
    if (items.size() != N) throw ConfigError(fmt::format("{}: expected {} values, got {}", key, N, items.size()));
    std::array<T, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = parse_number<T>(key, items[i]);
    return out;
}

template <class T, std::size_t N>
std::string format_array(const std::array<T, N>& a) {
    std::string s;
    for (std::size_t i = 0; i < N; ++i) s += (i ? " " : "") + fmt::format("{}", a[i]);
    return s;
}

struct Field {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

template <class T>
Field number(std::string section, std::string key, T& ref) {
    const auto full = section + "." + key;
    return {std::move(section), std::move(key), [&ref] { return fmt::format("{}", ref); },
            [&ref, full](const std::string& v) { ref = parse_number<T>(full, v); }};
}

Field boolean(std::string section, std::string key, bool& ref) {
    const auto full = section + "." + key;
    return {std::move(section), std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref, full](const std::string& v) { ref = parse_bool(full, v); }};
}

template <class T, std::size_t N>
Field array(std::string section, std::string key, std::array<T, N>& ref) {
    const auto full = section + "." + key;
    return {std::move(section), std::move(key), [&ref] { return format_array(ref); },
            [&ref, full](const std::string& v) { ref = parse_array<T, N>(full, v); }};
}

Field text(std::string section, std::string key, std::string& ref) {
    return {std::move(section), std::move(key), [&ref] { return ref; }, [&ref](const std::string& v) { ref = trim(v); }};
}

std::vector<Field> model_fields(ModelConfig& m) {
    return {
        array("grid", "range_min", m.grid.range_min),
        array("grid", "range_max", m.grid.range_max),
        number("grid", "voxel_size", m.grid.voxel_size),
        number("model", "class_count", m.class_count),
        number("model", "feature_dim", m.feature_dim),
        number("model", "fusion_dim", m.fusion_dim),
        array("model", "widths_2d", m.widths_2d),
        array("model", "widths_3d", m.widths_3d),
        number("model", "level_count", m.level_count),
        number("model", "fusion_levels", m.fusion_levels),
        boolean("model", "segmentation_branch", m.segmentation_branch),
        boolean("model", "segmentation_decoder", m.segmentation_decoder),
        boolean("model", "conv_batch_norm", m.conv_batch_norm),
        number("model", "empty_prior", m.empty_prior),
        number("model", "seed", m.seed),
    };
}

std::vector<Field> all_fields(RunConfig& c) {
    auto f = model_fields(c.model);
    auto& t = c.train;
    auto& s = c.synth;
    auto& d = c.data;
    std::vector<Field> more{
        number("train", "lr", t.lr),
        number("train", "beta1", t.beta1),
        number("train", "beta2", t.beta2),
        number("train", "epsilon", t.epsilon),
        number("train", "lr_decay", t.lr_decay),
        number("train", "batch_size", t.batch_size),
        number("train", "epochs", t.epochs),
        number("train", "seed", t.seed),
        boolean("train", "augment", t.augment),
        number("train", "flip_probability", t.flip_probability),
        boolean("train", "completion_lovasz", t.loss.completion_lovasz),
        boolean("train", "segmentation_loss", t.loss.segmentation),
        boolean("train", "segmentation_lovasz", t.loss.segmentation_lovasz),
        boolean("train", "exclude_invalid", t.loss.exclude_invalid),
        number("train", "sigma_seg", t.loss.sigma_seg),
        number("train", "sigma_com", t.loss.sigma_com),
        number("train", "validate_every", t.validate_every),
        number("train", "train_metrics_every", t.train_metrics_every),
        number("synth", "object_count", s.object_count),
        number("synth", "beams", s.beams),
        number("synth", "azimuth_steps", s.azimuth_steps),
        number("synth", "elevation_min_deg", s.elevation_min_deg),
        number("synth", "elevation_max_deg", s.elevation_max_deg),
        number("synth", "sensor_height", s.sensor_height),
        number("synth", "jitter", s.jitter),
        text("data", "root", d.root),
        text("data", "val_root", d.val_root),
        number("data", "train_scenes", d.train_scenes),
        number("data", "val_scenes", d.val_scenes),
        number("data", "seed", d.seed),
        boolean("eval", "skip_absent", t.skip_absent),
        text("eval", "palette", c.palette),
    };
    // The label map is a single text value.
    more.push_back({"labels", "map", [&c] { return c.labels.to_string(); },
                    [&c](const std::string& v) {
                        try {
                            c.labels = LabelMap::parse(v);
                        } catch (const std::invalid_argument& e) {
                            throw ConfigError(fmt::format("labels.map: {}", e.what()));
                        }
                    }});
    f.insert(f.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    return f;
}

Field* find_field(std::vector<Field>& fields, const std::string& section, const std::string& key) {
    for (auto& f : fields) {
        if (f.section == section && f.key == key) return &f;
    }
    return nullptr;
}

void apply_text(std::vector<Field>& fields, const std::string& text, const std::vector<std::string>& allowed_sections) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(fmt::format("config parse error at line {}: {}", e.line(), e.message()));
    }
    for (const auto& [section, body] : tree) {
        if (!body.data().empty()) throw ConfigError(fmt::format("key '{}' outside any section", section));
        if (std::find(allowed_sections.begin(), allowed_sections.end(), section) == allowed_sections.end()) {
            throw ConfigError(fmt::format("unknown config section [{}]", section));
        }
        for (const auto& [key, value] : body) {
            Field* f = find_field(fields, section, key);
            if (!f) throw ConfigError(fmt::format("unknown config key '{}.{}'", section, key));
            f->set(value.data());
        }
    }
}

std::string render(std::vector<Field>& fields) {
    std::string out;
    std::string section;
    for (const auto& f : fields) {
        if (f.section != section) {
            if (!section.empty()) out += '\n';
            section = f.section;
            out += fmt::format("[{}]\n", section);
        }
        out += fmt::format("{} = {}\n", f.key, f.get());
    }
    return out;
}

const std::vector<std::string> kSections{"grid", "model", "train", "synth", "data", "eval", "labels"};

}  // namespace

void RunConfig::finalize() {
    synth.grid = model.grid;
    synth.class_count = model.class_count;
    model.validate();
    train.validate();
    if (labels.table().empty()) labels = LabelMap::identity(model.class_count);
    for (const auto& [raw, t] : labels.table()) {
        if (t != kEmptyLabel && t > model.class_count) {
            throw ConfigError(fmt::format("label map sends raw id {} to {} but class_count is {}", raw, t, model.class_count));
        }
    }
}

RunConfig parse_config(const std::string& text) {
    RunConfig c;
    auto fields = all_fields(c);
    apply_text(fields, text, kSections);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError(fmt::format("override '{}' is not section.key=value", assignment));
    }
    const auto section = trim(assignment.substr(0, dot));
    const auto key = trim(assignment.substr(dot + 1, eq - dot - 1));
    auto fields = all_fields(config);
    Field* f = find_field(fields, section, key);
    if (!f) throw ConfigError(fmt::format("unknown config key '{}.{}'", section, key));
    f->set(assignment.substr(eq + 1));
}

std::string to_ini(const RunConfig& config) {
    auto copy = config;
    auto fields = all_fields(copy);
    return render(fields);
}

const std::vector<std::string>& ablation_names() {
    static const std::vector<std::string> names{"2d-ce", "2d-ce-lvz", "full-seg-lvz", "enc-only-ce", "enc-only-ce-lvz",
                                                "full"};
    return names;
}

void apply_ablation(RunConfig& config, const std::string& name) {
    struct Row {
        bool branch, decoder, com_lvz, seg, seg_lvz;
    };
    Row r{};
    if (name == "2d-ce") r = {false, false, false, false, false};
    else if (name == "2d-ce-lvz") r = {false, false, true, false, false};
    else if (name == "full-seg-lvz") r = {true, true, false, true, true};
    else if (name == "enc-only-ce") r = {true, false, false, false, false};
    else if (name == "enc-only-ce-lvz") r = {true, false, true, false, false};
    else if (name == "full") r = {true, true, true, true, true};
    else throw ConfigError(fmt::format("unknown ablation '{}'", name));
    config.model.segmentation_branch = r.branch;
    config.model.segmentation_decoder = r.decoder;
    config.train.loss.completion_lovasz = r.com_lvz;
    config.train.loss.segmentation = r.seg;
    config.train.loss.segmentation_lovasz = r.seg_lvz;
}

std::string model_config_text(const ModelConfig& config) {
    auto copy = config;
    auto fields = model_fields(copy);
    return render(fields);
}

ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig m;
    auto fields = model_fields(m);
    apply_text(fields, text, {"grid", "model"});
    return m;
}

}  // namespace ssasc
