#include "co2rl/common/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "co2rl/common/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are not supported");

namespace co2rl {

BinaryWriter::BinaryWriter(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw IoError("cannot open for writing: " + path);
}

BinaryWriter::~BinaryWriter() {
    if (f_) std::fclose(f_);
}

void BinaryWriter::bytes(const void* data, std::size_t len) {
    if (std::fwrite(data, 1, len, f_) != len) throw IoError("write failed: " + path_);
}

void BinaryWriter::u16(std::uint16_t v) { bytes(&v, 2); }
void BinaryWriter::u64(std::uint64_t v) { bytes(&v, 8); }
void BinaryWriter::f32(float v) { bytes(&v, 4); }
void BinaryWriter::f64(double v) { bytes(&v, 8); }
void BinaryWriter::f32_array(const float* data, std::size_t n) { bytes(data, 4 * n); }
void BinaryWriter::f64_array(const double* data, std::size_t n) { bytes(data, 8 * n); }

void BinaryWriter::close() {
    if (f_) {
        if (std::fclose(f_) != 0) throw IoError("close failed: " + path_);
        f_ = nullptr;
    }
}

BinaryReader::BinaryReader(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "rb");
    if (!f_) throw IoError("cannot open for reading: " + path);
}

BinaryReader::~BinaryReader() {
    if (f_) std::fclose(f_);
}

void BinaryReader::bytes(void* out, std::size_t len) {
    if (std::fread(out, 1, len, f_) != len) throw IoError("unexpected end of file: " + path_);
}

std::uint16_t BinaryReader::u16() {
    std::uint16_t v;
    bytes(&v, 2);
    return v;
}
std::uint64_t BinaryReader::u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
}
float BinaryReader::f32() {
    float v;
    bytes(&v, 4);
    return v;
}
double BinaryReader::f64() {
    double v;
    bytes(&v, 8);
    return v;
}
void BinaryReader::f32_array(float* out, std::size_t n) { bytes(out, 4 * n); }
void BinaryReader::f64_array(double* out, std::size_t n) { bytes(out, 8 * n); }

bool BinaryReader::at_eof() {
    const int c = std::fgetc(f_);
    if (c == EOF) return true;
    std::ungetc(c, f_);
    return false;
}

void write_pgm16(const std::string& path, const Eigen::ArrayXXd& field) {
    const double lo = field.minCoeff();
    const double hi = field.maxCoeff();
    const double span = hi > lo ? hi - lo : 1.0;

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fprintf(f, "P5\n%ld %ld\n65535\n", long(field.cols()), long(field.rows()));
    // PGM rows top to bottom; samples big-endian per the format
    for (Eigen::Index r = 0; r < field.rows(); ++r) {
        for (Eigen::Index c = 0; c < field.cols(); ++c) {
            const double t = (field(r, c) - lo) / span;
            const auto v = static_cast<std::uint16_t>(t * 65535.0 + 0.5);
            const std::uint8_t be[2] = {std::uint8_t(v >> 8), std::uint8_t(v & 0xff)};
            if (std::fwrite(be, 1, 2, f) != 2) {
                std::fclose(f);
                throw IoError("write failed: " + path);
            }
        }
    }
    std::fclose(f);

    std::ostringstream scale;
    scale.precision(17);
    scale << "scale.min = " << lo << "\nscale.max = " << hi << "\n";
    write_text_file(path + ".scale", scale.str());
}

void write_field_csv(const std::string& path, const Eigen::ArrayXXd& field) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    for (Eigen::Index r = 0; r < field.rows(); ++r) {
        for (Eigen::Index c = 0; c < field.cols(); ++c)
            std::fprintf(f, c == 0 ? "%.17g" : ",%.17g", field(r, c));
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    for (std::size_t i = 0; i < header.size(); ++i)
        std::fprintf(f, i == 0 ? "%s" : ",%s", header[i].c_str());
    std::fprintf(f, "\n");
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            std::fprintf(f, i == 0 ? "%.12g" : ",%.12g", row[i]);
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write file: " + path);
    f << content;
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace co2rl
