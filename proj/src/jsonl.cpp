#include "pkeval/jsonl.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pkeval {

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(size_t, json&&)>& fn) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("jsonl: cannot open " + path.string());
    }
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("jsonl: " + path.string() + " line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        fn(line_no, std::move(obj));
    }
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::vector<json> rows;
    for_each_jsonl(path, [&](size_t, json&& obj) { rows.push_back(std::move(obj)); });
    return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("jsonl: cannot write " + path.string());
    }
    for (const auto& row : rows) {
        out << row.dump() << '\n';
    }
}

void append_jsonl(const std::filesystem::path& path, const json& row) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw std::runtime_error("jsonl: cannot append to " + path.string());
    }
    out << row.dump() << '\n';
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << content;
}

}  // namespace pkeval
