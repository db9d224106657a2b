#include "assd/fileio.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <unistd.h>

namespace assd {

std::vector<std::uint8_t> readFileBytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void atomicWriteFile(const std::string& path, const void* data, std::size_t len) {
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path);
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        if (!out) {
            std::remove(tmp.c_str());
            throw std::runtime_error("write failed for " + path);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.c_str());
        throw std::runtime_error("cannot move output into place at " + path + ": " + ec.message());
    }
}

void atomicWriteFile(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    atomicWriteFile(path, bytes.data(), bytes.size());
}

void atomicWriteFile(const std::string& path, const std::string& text) {
    atomicWriteFile(path, text.data(), text.size());
}

} // namespace assd
