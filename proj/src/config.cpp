#include "otmatch/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace otmatch {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void Config::fail(int line, const std::string& what) const {
    throw std::invalid_argument(origin_ + ":" + std::to_string(line) + ": " + what);
}

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        std::string line = raw;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') cfg.fail(lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) cfg.fail(lineno, "empty section name");
            cfg.sections_[section];
            cfg.section_lines_.emplace(section, lineno);
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) cfg.fail(lineno, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) cfg.fail(lineno, "empty key");
        if (section.empty()) cfg.fail(lineno, "key outside any section");
        cfg.sections_[section].emplace(key, Entry{value, lineno});
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str(), path);
}

const Config::Entry* Config::find_one(const std::string& section,
                                      const std::string& key) const {
    auto sit = sections_.find(section);
    if (sit == sections_.end()) return nullptr;
    auto range = sit->second.equal_range(key);
    if (range.first == range.second) return nullptr;
    auto next = range.first;
    ++next;
    if (next != range.second)
        fail(next->second.line, "duplicate key '" + key + "' in [" + section + "]");
    return &range.first->second;
}

bool Config::has(const std::string& section, const std::string& key) const {
    auto sit = sections_.find(section);
    if (sit == sections_.end()) return false;
    return sit->second.count(key) > 0;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    const Entry* e = find_one(section, key);
    return e ? e->value : fallback;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    const Entry* e = find_one(section, key);
    if (!e) return fallback;
    std::istringstream is(e->value);
    double v;
    if (!(is >> v)) fail(e->line, "expected a number for '" + key + "'");
    return v;
}

int Config::get_int(const std::string& section, const std::string& key,
                    int fallback) const {
    const Entry* e = find_one(section, key);
    if (!e) return fallback;
    std::istringstream is(e->value);
    int v;
    if (!(is >> v)) fail(e->line, "expected an integer for '" + key + "'");
    return v;
}

std::uint64_t Config::get_u64(const std::string& section, const std::string& key,
                              std::uint64_t fallback) const {
    const Entry* e = find_one(section, key);
    if (!e) return fallback;
    std::istringstream is(e->value);
    std::uint64_t v;
    if (!(is >> v)) fail(e->line, "expected an unsigned integer for '" + key + "'");
    return v;
}

std::vector<double> Config::get_doubles(const std::string& section, const std::string& key,
                                        std::vector<double> fallback) const {
    const Entry* e = find_one(section, key);
    if (!e) return fallback;
    std::istringstream is(e->value);
    std::vector<double> out;
    double v;
    while (is >> v) out.push_back(v);
    if (!is.eof() || out.empty()) fail(e->line, "expected numbers for '" + key + "'");
    return out;
}

std::vector<std::string> Config::get_strings(const std::string& section,
                                             const std::string& key,
                                             std::vector<std::string> fallback) const {
    const Entry* e = find_one(section, key);
    if (!e) return fallback;
    std::istringstream is(e->value);
    std::vector<std::string> out;
    std::string v;
    while (is >> v) out.push_back(v);
    if (out.empty()) fail(e->line, "expected values for '" + key + "'");
    return out;
}

std::vector<std::string> Config::values_of(const std::string& section,
                                           const std::string& key) const {
    std::vector<std::string> out;
    auto sit = sections_.find(section);
    if (sit == sections_.end()) return out;
    auto range = sit->second.equal_range(key);
    for (auto it = range.first; it != range.second; ++it) out.push_back(it->second.value);
    return out;
}

void Config::require_sections(const std::vector<std::string>& allowed) const {
    for (const auto& [name, entries] : sections_) {
        (void)entries;
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == name;
        if (!ok) fail(section_lines_.at(name), "unknown section [" + name + "]");
    }
}

void Config::require_keys(const std::string& section,
                          const std::vector<std::string>& allowed) const {
    auto sit = sections_.find(section);
    if (sit == sections_.end()) return;
    for (const auto& [key, entry] : sit->second) {
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == key;
        if (!ok) fail(entry.line, "unknown key '" + key + "' in [" + section + "]");
    }
}

namespace {

const std::vector<std::string> kSceneKeys = {
    "h",      "w",           "c",              "num_classes", "num_objects",
    "radius", "noise_sigma", "empty_fraction", "jitter",      "object"};

}  // namespace

SceneParams scene_params_from_config(const Config& cfg) {
    cfg.require_keys("scene", kSceneKeys);
    SceneParams p;
    p.height = cfg.get_int("scene", "h", p.height);
    p.width = cfg.get_int("scene", "w", p.width);
    p.channels = cfg.get_int("scene", "c", p.channels);
    p.num_classes = cfg.get_int("scene", "num_classes", p.num_classes);
    p.num_objects = cfg.get_int("scene", "num_objects", p.num_objects);
    p.radius = cfg.get_int("scene", "radius", p.radius);
    p.noise_sigma = cfg.get_double("scene", "noise_sigma", p.noise_sigma);
    p.empty_fraction_target = cfg.get_double("scene", "empty_fraction", p.empty_fraction_target);
    p.max_jitter = cfg.get_int("scene", "jitter", p.max_jitter);
    return p;
}

SceneSpec scene_spec_from_config(const Config& cfg) {
    cfg.require_keys("scene", kSceneKeys);
    SceneParams p = scene_params_from_config(cfg);
    SceneSpec spec;
    spec.height = p.height;
    spec.width = p.width;
    spec.channels = p.channels;
    spec.num_classes = p.num_classes;
    spec.noise_sigma = p.noise_sigma;
    spec.empty_fraction_target = p.empty_fraction_target;
    spec.max_jitter = p.max_jitter;
    for (const std::string& line : cfg.values_of("scene", "object")) {
        std::istringstream is(line);
        SceneObject o;
        if (!(is >> o.class_id >> o.row >> o.col >> o.radius))
            throw std::invalid_argument("object entries need: class row col radius");
        spec.objects.push_back(o);
    }
    spec.validate();
    return spec;
}

ExperimentConfig experiment_from_config(const Config& cfg) {
    cfg.require_sections({"scene", "experiment"});
    cfg.require_keys("experiment", {"gallery", "queries", "runs", "seed", "pmask", "q",
                                    "metrics", "alpha", "reg", "threads"});
    ExperimentConfig ec;
    ec.scene = scene_params_from_config(cfg);
    ec.gallery_size = cfg.get_int("experiment", "gallery", ec.gallery_size);
    ec.num_queries = cfg.get_int("experiment", "queries", ec.num_queries);
    ec.runs = cfg.get_int("experiment", "runs", ec.runs);
    ec.seed = cfg.get_u64("experiment", "seed", ec.seed);
    ec.p_masks = cfg.get_doubles("experiment", "pmask", ec.p_masks);
    std::vector<double> qs_raw;
    for (int q : ec.qs) qs_raw.push_back(q);
    qs_raw = cfg.get_doubles("experiment", "q", qs_raw);
    ec.qs.clear();
    for (double q : qs_raw) ec.qs.push_back(static_cast<int>(q));
    if (cfg.has("experiment", "metrics")) {
        ec.metrics.clear();
        for (const std::string& name : cfg.get_strings("experiment", "metrics", {}))
            ec.metrics.push_back(parse_metric(name));
    }
    ec.alpha = cfg.get_double("experiment", "alpha", ec.alpha);
    ec.reg = cfg.get_double("experiment", "reg", ec.reg);
    ec.threads = cfg.get_int("experiment", "threads", ec.threads);
    ec.validate();
    return ec;
}

}  // namespace otmatch
