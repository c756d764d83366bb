#include "adaptkit/kvconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>

#include "adaptkit/errors.hpp"

namespace adaptkit::kv {

namespace {

std::string_view trim(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t' ||
                             text.front() == '\r')) {
        text.remove_prefix(1);
    }
    while (!text.empty() &&
           (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
        text.remove_suffix(1);
    }
    return text;
}

}  // namespace

KvMap parse_text(const std::string& text, const std::string& origin) {
    KvMap map;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        const size_t eq = view.find('=');
        if (eq == std::string_view::npos) {
            throw validation_error(origin + ":" + std::to_string(line_no) +
                                   ": expected key=value");
        }
        std::string_view key = trim(view.substr(0, eq));
        if (key.empty()) {
            throw validation_error(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        map[std::string(key)] = std::string(trim(view.substr(eq + 1)));
    }
    return map;
}

KvMap parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_text(buffer.str(), path);
}

KvMap merge(KvMap base, const KvMap& overlay) {
    for (const auto& [key, value] : overlay) base[key] = value;
    return base;
}

std::optional<std::string> get(const KvMap& map, const std::string& key) {
    auto it = map.find(key);
    if (it == map.end()) return std::nullopt;
    return it->second;
}

uint64_t get_u64(const KvMap& map, const std::string& key, uint64_t fallback) {
    auto value = get(map, key);
    if (!value) return fallback;
    uint64_t parsed = 0;
    const char* first = value->data();
    const char* last = first + value->size();
    auto [ptr, ec] = std::from_chars(first, last, parsed);
    if (ec != std::errc{} || ptr != last) {
        throw validation_error("config key '" + key + "': '" + *value +
                               "' is not an unsigned integer");
    }
    return parsed;
}

double get_double(const KvMap& map, const std::string& key, double fallback) {
    auto value = get(map, key);
    if (!value) return fallback;
    try {
        size_t consumed = 0;
        const double parsed = std::stod(*value, &consumed);
        if (consumed != value->size()) throw std::invalid_argument("trailing characters");
        return parsed;
    } catch (const std::exception&) {
        throw validation_error("config key '" + key + "': '" + *value + "' is not a number");
    }
}

bool get_bool(const KvMap& map, const std::string& key, bool fallback) {
    auto value = get(map, key);
    if (!value) return fallback;
    if (*value == "true" || *value == "1" || *value == "yes" || *value == "on") return true;
    if (*value == "false" || *value == "0" || *value == "no" || *value == "off") return false;
    throw validation_error("config key '" + key + "': '" + *value + "' is not a boolean");
}

std::string get_string(const KvMap& map, const std::string& key, const std::string& fallback) {
    auto value = get(map, key);
    return value ? *value : fallback;
}

}  // namespace adaptkit::kv
