#pragma once

#include "otmatch/retrieval.hpp"
#include "otmatch/synth.hpp"

#include <map>
#include <string>
#include <vector>

namespace otmatch {

/// Sectioned key-value text config:
///
///   [scene]
///   h = 5
///   object = 2 1 3 0    # class row col radius, repeatable
///
/// Unknown sections or keys are errors (fail fast); diagnostics carry the
/// origin and line number.
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<config>");
    static Config parse_file(const std::string& path);

    bool has(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key,
                      double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const;
    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    std::vector<double> fallback) const;
    std::vector<std::string> get_strings(const std::string& section, const std::string& key,
                                         std::vector<std::string> fallback) const;
    /// Every value of a repeatable key, in file order.
    std::vector<std::string> values_of(const std::string& section,
                                       const std::string& key) const;

    /// Throws if the file contains a section not listed.
    void require_sections(const std::vector<std::string>& allowed) const;
    /// Throws if the section contains a key not listed.
    void require_keys(const std::string& section,
                      const std::vector<std::string>& allowed) const;

private:
    struct Entry {
        std::string value;
        int line;
    };
    std::string origin_;
    std::map<std::string, std::multimap<std::string, Entry>> sections_;
    std::map<std::string, int> section_lines_;

    [[noreturn]] void fail(int line, const std::string& what) const;
    const Entry* find_one(const std::string& section, const std::string& key) const;
};

/// [scene] section -> sampling parameters (keys: h, w, c, num_classes,
/// num_objects, radius, noise_sigma, empty_fraction, jitter).
SceneParams scene_params_from_config(const Config& cfg);

/// [scene] section with explicit `object` lines -> a concrete SceneSpec.
SceneSpec scene_spec_from_config(const Config& cfg);

/// [scene] + [experiment] sections -> a full experiment description.
ExperimentConfig experiment_from_config(const Config& cfg);

}  // namespace otmatch
