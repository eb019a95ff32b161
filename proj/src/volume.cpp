#include "spinecade/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "spinecade/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw payloads are little-endian; big-endian hosts unsupported");

namespace spinecade {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double parse_double(const std::string& s, Errc on_error, const std::string& ctx) {
  try {
    size_t pos = 0;
    const double v = std::stod(trim(s), &pos);
    if (pos != trim(s).size()) fail(on_error, ctx + ": trailing junk in '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(on_error, ctx + ": cannot parse number '" + s + "'");
  }
}

}  // namespace

Image2D<int16_t> Volume::axial_slice(int z) const {
  Image2D<int16_t> s(dims[0], dims[1]);
  std::memcpy(s.data().data(), data.data() + index(0, 0, z),
              static_cast<size_t>(dims[0]) * dims[1] * sizeof(int16_t));
  return s;
}

void Volume::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) fail(Errc::malformed_header, "volume dims must be >= 1");
    if (!(spacing[a] > 0.0))
      fail(Errc::malformed_header, "volume spacing must be > 0");
  }
  if (data.size() != voxel_count())
    fail(Errc::size_mismatch, "data length does not match dims");
}

const char* process_label_name(ProcessLabel label) {
  switch (label) {
    case ProcessLabel::left: return "left";
    case ProcessLabel::right: return "right";
    case ProcessLabel::spinous: return "spinous";
  }
  return "?";
}

ProcessLabel parse_process_label(const std::string& text) {
  const std::string t = trim(text);
  if (t == "left") return ProcessLabel::left;
  if (t == "right") return ProcessLabel::right;
  if (t == "spinous") return ProcessLabel::spinous;
  fail(Errc::unknown_label, "unknown process label '" + t + "'");
}

double world_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Volume load_volume(const std::filesystem::path& header_path) {
  std::ifstream hdr(header_path);
  if (!hdr) fail(Errc::missing_file, "cannot open header " + header_path.string());

  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(hdr, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(Errc::malformed_header, "header line without '=': " + line);
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  auto require = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end())
      fail(Errc::malformed_header, std::string("missing header key ") + key);
    return it->second;
  };

  if (require("NDims") != "3")
    fail(Errc::malformed_header, "NDims must be 3");

  Volume v;
  auto parse_triple = [&](const std::string& text, const char* key, auto& out) {
    std::istringstream in(text);
    for (int a = 0; a < 3; ++a) {
      double x;
      if (!(in >> x))
        fail(Errc::malformed_header, std::string(key) + " needs 3 values");
      out[a] = static_cast<std::remove_reference_t<decltype(out[0])>>(x);
    }
  };
  parse_triple(require("DimSize"), "DimSize", v.dims);
  parse_triple(require("ElementSpacing"), "ElementSpacing", v.spacing);
  if (kv.count("Offset")) parse_triple(kv["Offset"], "Offset", v.origin);

  const std::string& et = require("ElementType");
  if (et == "MET_SHORT") {
    v.elem_type = ElementType::int16;
  } else if (et == "MET_UCHAR") {
    v.elem_type = ElementType::uint8;
  } else {
    fail(Errc::malformed_header, "unsupported ElementType " + et);
  }

  for (int a = 0; a < 3; ++a) {
    if (v.dims[a] < 1) fail(Errc::malformed_header, "DimSize must be >= 1");
    if (!(v.spacing[a] > 0.0))
      fail(Errc::malformed_header, "ElementSpacing must be > 0");
  }

  const std::filesystem::path raw_path =
      header_path.parent_path() / require("ElementDataFile");
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) fail(Errc::missing_file, "cannot open payload " + raw_path.string());
  raw.seekg(0, std::ios::end);
  const auto nbytes = static_cast<uint64_t>(raw.tellg());
  raw.seekg(0);

  const size_t n = v.voxel_count();
  const size_t elem_size = v.elem_type == ElementType::int16 ? 2 : 1;
  if (nbytes != n * elem_size)
    fail(Errc::size_mismatch, "payload has " + std::to_string(nbytes) +
                                  " bytes, expected " +
                                  std::to_string(n * elem_size));

  v.data.resize(n);
  if (v.elem_type == ElementType::int16) {
    raw.read(reinterpret_cast<char*>(v.data.data()),
             static_cast<std::streamsize>(n * 2));
  } else {
    std::vector<uint8_t> bytes(n);
    raw.read(reinterpret_cast<char*>(bytes.data()),
             static_cast<std::streamsize>(n));
    for (size_t i = 0; i < n; ++i) v.data[i] = bytes[i];
  }
  if (!raw) fail(Errc::io_error, "short read from " + raw_path.string());
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& header_path) {
  v.validate();

  std::filesystem::path raw_path = header_path;
  raw_path.replace_extension(".raw");

  std::ofstream hdr(header_path, std::ios::trunc);
  if (!hdr) fail(Errc::io_error, "cannot write header " + header_path.string());
  auto triple = [](const auto& t) {
    std::ostringstream o;
    o.precision(17);
    o << t[0] << " " << t[1] << " " << t[2];
    return o.str();
  };
  hdr << "NDims = 3\n";
  hdr << "DimSize = " << triple(v.dims) << "\n";
  hdr << "ElementSpacing = " << triple(v.spacing) << "\n";
  hdr << "Offset = " << triple(v.origin) << "\n";
  hdr << "ElementType = "
      << (v.elem_type == ElementType::int16 ? "MET_SHORT" : "MET_UCHAR")
      << "\n";
  hdr << "ElementDataFile = " << raw_path.filename().string() << "\n";
  if (!hdr) fail(Errc::io_error, "write failed for " + header_path.string());
  hdr.close();

  std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
  if (!raw) fail(Errc::io_error, "cannot write payload " + raw_path.string());
  if (v.elem_type == ElementType::int16) {
    raw.write(reinterpret_cast<const char*>(v.data.data()),
              static_cast<std::streamsize>(v.data.size() * 2));
  } else {
    std::vector<uint8_t> bytes(v.data.size());
    for (size_t i = 0; i < v.data.size(); ++i)
      bytes[i] = static_cast<uint8_t>(v.data[i]);
    raw.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  if (!raw) fail(Errc::io_error, "write failed for " + raw_path.string());
}

std::vector<Annotation> load_annotations(const std::filesystem::path& csv_path,
                                         const Volume& v) {
  std::ifstream in(csv_path);
  if (!in) fail(Errc::missing_file, "cannot open " + csv_path.string());

  std::string line;
  if (!std::getline(in, line))
    fail(Errc::malformed_row, "annotation CSV is empty");
  if (trim(line) != "patient_id,x_mm,y_mm,z_mm,process_label")
    fail(Errc::malformed_row, "unexpected annotation CSV header: " + line);

  std::vector<Annotation> out;
  size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 5)
      fail(Errc::malformed_row,
           "row " + std::to_string(row_no) + ": expected 5 columns");
    Annotation a;
    a.patient_id = trim(cols[0]);
    const std::string ctx = "row " + std::to_string(row_no);
    a.position = {parse_double(cols[1], Errc::malformed_row, ctx),
                  parse_double(cols[2], Errc::malformed_row, ctx),
                  parse_double(cols[3], Errc::malformed_row, ctx)};
    a.process_label = parse_process_label(cols[4]);
    if (!v.world_in_bounds(a.position))
      fail(Errc::out_of_bounds,
           ctx + ": position outside the volume bounding box");
    out.push_back(std::move(a));
  }
  return out;
}

void save_annotations(const std::vector<Annotation>& annotations,
                      const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + csv_path.string());
  out << "patient_id,x_mm,y_mm,z_mm,process_label\n";
  out.precision(17);
  for (const auto& a : annotations) {
    out << a.patient_id << "," << a.position[0] << "," << a.position[1] << ","
        << a.position[2] << "," << process_label_name(a.process_label) << "\n";
  }
  if (!out) fail(Errc::io_error, "write failed for " + csv_path.string());
}

}  // namespace spinecade
