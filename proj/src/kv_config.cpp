#include "vla/kv_config.hpp"

#include <charconv>
#include <sstream>

#include "vla/binary_io.hpp"
#include "vla/error.hpp"

namespace vla {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& context) {
    KeyValues kv;
    kv.context_ = context;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError(context + ":" + std::to_string(lineno) + ": expected key=value");
        }
        kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    return parse(io::read_text(path), path.string());
}

const std::string& KeyValues::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw FormatError(context_ + ": missing key '" + key + "'");
    return it->second;
}

std::optional<std::string> KeyValues::find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

double KeyValues::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw FormatError(context_ + ": key '" + key + "' is not a number: " + v);
    }
}

long long KeyValues::get_int(const std::string& key) const {
    const std::string& v = get(key);
    long long out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw FormatError(context_ + ": key '" + key + "' is not an integer: " + v);
    }
    return out;
}

bool KeyValues::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw FormatError(context_ + ": key '" + key + "' is not a boolean: " + v);
}

void KeyValues::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::vector<std::string> KeyValues::keys() const {
    std::vector<std::string> k;
    for (const auto& [key, _] : values_) k.push_back(key);
    return k;
}

std::string KeyValues::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

void KeyValues::merge(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

}  // namespace vla
