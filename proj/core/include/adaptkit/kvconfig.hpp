#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

namespace adaptkit::kv {

using KvMap = std::map<std::string, std::string>;

// Flat key=value lines; '#' starts a comment, blank lines are skipped, keys
// and values are whitespace-trimmed, later duplicates win. Malformed lines
// are rejected with their line number.
KvMap parse_text(const std::string& text, const std::string& origin = "<config>");
KvMap parse_file(const std::string& path);

// Overlay wins on key collisions.
KvMap merge(KvMap base, const KvMap& overlay);

std::optional<std::string> get(const KvMap& map, const std::string& key);

// Typed accessors reject values that do not parse in full.
uint64_t get_u64(const KvMap& map, const std::string& key, uint64_t fallback);
double get_double(const KvMap& map, const std::string& key, double fallback);
bool get_bool(const KvMap& map, const std::string& key, bool fallback);
std::string get_string(const KvMap& map, const std::string& key, const std::string& fallback);

}  // namespace adaptkit::kv
