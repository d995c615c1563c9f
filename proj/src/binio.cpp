#include "frematch/binio.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace frematch::binio {

namespace {

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }
}

template <class T>
void write_block(std::ostream& out, std::span<const T> values) {
    for (T v : values) {
        const T le = to_little(v);
        out.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
    if (!out) throw std::runtime_error("binio: write failed");
}

template <class T>
std::vector<T> read_block(std::istream& in, std::size_t count) {
    std::vector<T> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T)) {
        throw std::runtime_error("binio: truncated block, expected " + std::to_string(count) + " values");
    }
    for (auto& v : values) v = to_little(v);
    return values;
}

}  // namespace

void write_header(std::ostream& out, const nlohmann::json& header) {
    out << header.dump() << '\n';
}

nlohmann::json read_header(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("binio: missing JSON header");
    return nlohmann::json::parse(line);
}

void write_f64(std::ostream& out, std::span<const double> values) { write_block(out, values); }
void write_i32(std::ostream& out, std::span<const std::int32_t> values) { write_block(out, values); }
std::vector<double> read_f64(std::istream& in, std::size_t count) { return read_block<double>(in, count); }
std::vector<std::int32_t> read_i32(std::istream& in, std::size_t count) {
    return read_block<std::int32_t>(in, count);
}

}  // namespace frematch::binio
