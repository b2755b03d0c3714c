#include "opsim/toml_lite.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "opsim/errors.hpp"

namespace opsim {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& message) {
    throw ValidationError("toml line " + std::to_string(line) + ": " + message);
}

std::string strip_comment(const std::string& line) {
    bool in_basic = false;
    bool in_literal = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (in_basic) {
            if (c == '\\') ++i;
            else if (c == '"') in_basic = false;
        } else if (in_literal) {
            if (c == '\'') in_literal = false;
        } else if (c == '"') {
            in_basic = true;
        } else if (c == '\'') {
            in_literal = true;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

std::string trim(const std::string& text) {
    std::size_t begin = text.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    std::size_t end = text.find_last_not_of(" \t\r");
    return text.substr(begin, end - begin + 1);
}

std::vector<std::string> split_key_path(const std::string& text, std::size_t line) {
    std::vector<std::string> parts;
    std::string current;
    bool quoted = false;
    for (char c : text) {
        if (quoted) {
            if (c == '"') quoted = false;
            else current.push_back(c);
        } else if (c == '"') {
            quoted = true;
        } else if (c == '.') {
            parts.push_back(trim(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    parts.push_back(trim(current));
    for (const auto& part : parts) {
        if (part.empty()) fail(line, "empty key segment in '" + text + "'");
    }
    return parts;
}

nlohmann::json parse_scalar(const std::string& raw, std::size_t line);

nlohmann::json parse_array(const std::string& raw, std::size_t line) {
    nlohmann::json array = nlohmann::json::array();
    std::string inner = trim(raw.substr(1, raw.size() - 2));
    if (inner.empty()) return array;
    std::vector<std::string> items;
    std::string current;
    bool in_basic = false;
    bool in_literal = false;
    int depth = 0;
    for (char c : inner) {
        if (in_basic) {
            current.push_back(c);
            if (c == '"') in_basic = false;
        } else if (in_literal) {
            current.push_back(c);
            if (c == '\'') in_literal = false;
        } else if (c == '"') {
            current.push_back(c);
            in_basic = true;
        } else if (c == '\'') {
            current.push_back(c);
            in_literal = true;
        } else if (c == '[') {
            current.push_back(c);
            ++depth;
        } else if (c == ']') {
            current.push_back(c);
            --depth;
        } else if (c == ',' && depth == 0) {
            items.push_back(trim(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!trim(current).empty()) items.push_back(trim(current));
    for (const auto& item : items) array.push_back(parse_scalar(item, line));
    return array;
}

std::string decode_basic_string(const std::string& raw, std::size_t line) {
    std::string out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        char c = raw[i];
        if (c != '\\') {
            out.push_back(c);
            continue;
        }
        if (++i >= raw.size()) fail(line, "dangling escape in string");
        switch (raw[i]) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default: fail(line, std::string("unsupported escape \\") + raw[i]);
        }
    }
    return out;
}

nlohmann::json parse_scalar(const std::string& raw, std::size_t line) {
    if (raw.empty()) fail(line, "empty value");
    if (raw.front() == '[') {
        if (raw.back() != ']') fail(line, "unterminated array");
        return parse_array(raw, line);
    }
    if (raw.front() == '"') {
        if (raw.size() < 2 || raw.back() != '"') fail(line, "unterminated string");
        return decode_basic_string(raw.substr(1, raw.size() - 2), line);
    }
    if (raw.front() == '\'') {
        if (raw.size() < 2 || raw.back() != '\'') fail(line, "unterminated literal string");
        return raw.substr(1, raw.size() - 2);
    }
    if (raw == "true") return true;
    if (raw == "false") return false;

    std::string numeric = raw;
    numeric.erase(std::remove(numeric.begin(), numeric.end(), '_'), numeric.end());
    char* end = nullptr;
    errno = 0;
    if (numeric.find('.') == std::string::npos && numeric.find('e') == std::string::npos &&
        numeric.find('E') == std::string::npos) {
        long long integer = std::strtoll(numeric.c_str(), &end, 10);
        if (errno == 0 && end == numeric.c_str() + numeric.size()) return integer;
    }
    errno = 0;
    double real = std::strtod(numeric.c_str(), &end);
    if (errno == 0 && end == numeric.c_str() + numeric.size()) return real;
    fail(line, "cannot parse value '" + raw + "'");
}

nlohmann::json* descend(nlohmann::json& root, const std::vector<std::string>& path,
                        std::size_t line) {
    nlohmann::json* node = &root;
    for (const auto& part : path) {
        if (node->is_array()) node = &node->back();
        if (node->is_null()) *node = nlohmann::json::object();
        if (!node->is_object()) fail(line, "key path collides with a non-table value");
        node = &(*node)[part];
    }
    if (node->is_array()) node = &node->back();
    return node;
}

} // namespace

nlohmann::json parse_toml_lite(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* current = &root;

    std::istringstream stream(text);
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(stream, line)) {
        ++line_number;
        std::string body = trim(strip_comment(line));
        if (body.empty()) continue;

        if (body.size() >= 4 && body.rfind("[[", 0) == 0 && body.substr(body.size() - 2) == "]]") {
            auto path = split_key_path(trim(body.substr(2, body.size() - 4)), line_number);
            nlohmann::json* node = &root;
            for (std::size_t i = 0; i + 1 < path.size(); ++i) {
                if (node->is_array()) node = &node->back();
                node = &(*node)[path[i]];
            }
            if (node->is_array()) node = &node->back();
            nlohmann::json& slot = (*node)[path.back()];
            if (slot.is_null()) slot = nlohmann::json::array();
            if (!slot.is_array()) fail(line_number, "redefining key as array of tables");
            slot.push_back(nlohmann::json::object());
            current = &slot.back();
            continue;
        }
        if (body.front() == '[' && body.back() == ']') {
            auto path = split_key_path(trim(body.substr(1, body.size() - 2)), line_number);
            current = descend(root, path, line_number);
            if (!current->is_object()) {
                if (current->is_null()) *current = nlohmann::json::object();
                else fail(line_number, "table name collides with a value");
            }
            continue;
        }

        const std::size_t eq = [&] {
            bool quoted = false;
            for (std::size_t i = 0; i < body.size(); ++i) {
                if (body[i] == '"') quoted = !quoted;
                if (body[i] == '=' && !quoted) return i;
            }
            return std::string::npos;
        }();
        if (eq == std::string::npos) fail(line_number, "expected key = value");
        auto path = split_key_path(trim(body.substr(0, eq)), line_number);
        nlohmann::json value = parse_scalar(trim(body.substr(eq + 1)), line_number);

        nlohmann::json* node = current;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) {
            node = &(*node)[path[i]];
            if (node->is_null()) *node = nlohmann::json::object();
        }
        (*node)[path.back()] = std::move(value);
    }
    return root;
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (path.extension() == ".toml") return parse_toml_lite(buffer.str());
    try {
        return nlohmann::json::parse(buffer.str());
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError("invalid JSON config " + path.string() + ": " + ex.what());
    }
}

} // namespace opsim
