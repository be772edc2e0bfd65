#include "ocl/morphology.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>
#include <utility>
#include <vector>

namespace ocl {
namespace {

const double kNominalSpread = deg2rad(60.0);
constexpr double kXmlTol = 1e-9;  // consistency tolerance for parsed numbers

const char* const kLimbPrefix[4] = {"fl", "fr", "rl", "rr"};

std::string fmt(double v) {
  if (v == 0.0) return "0";  // also folds away negative zero
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(const Vec3& v) {
  return fmt(v.x()) + " " + fmt(v.y()) + " " + fmt(v.z());
}

Vec3 rotate(const Vec3& axis, double angle, const Vec3& v) {
  return Eigen::AngleAxisd(angle, axis) * v;
}

[[noreturn]] void fail(DescriptionError::Code code, int line,
                       const std::string& element, const std::string& msg) {
  throw DescriptionError(code, line, element,
                         "line " + std::to_string(line) + " <" + element +
                             ">: " + msg);
}

// ---------------------------------------------------------------------------
// Minimal XML reader: elements, attributes, comments, declarations. Text
// content is skipped (the dialect keeps everything in attributes). Tracks
// line numbers for diagnostics.

struct XmlAttr {
  std::string name;
  std::string value;
};

struct XmlNode {
  std::string name;
  int line = 1;
  std::vector<XmlAttr> attrs;
  std::vector<XmlNode> children;

  const std::string* find(const std::string& attr) const {
    for (const XmlAttr& a : attrs)
      if (a.name == attr) return &a.value;
    return nullptr;
  }
  const XmlNode* child(const std::string& tag) const {
    for (const XmlNode& c : children)
      if (c.name == tag) return &c;
    return nullptr;
  }
};

class XmlReader {
 public:
  explicit XmlReader(const std::string& text) : s_(text) {}

  XmlNode parse_document() {
    skip_misc();
    if (eof()) fail_here("document has no root element", "");
    XmlNode root = parse_element();
    skip_misc();
    if (!eof()) fail_here("trailing content after the root element", root.name);
    return root;
  }

 private:
  [[noreturn]] void fail_here(const std::string& msg, const std::string& elem) {
    fail(DescriptionError::Code::ParseError, line_, elem, msg);
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  char get() {
    const char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }
  bool starts_with(const char* t) const {
    return s_.compare(pos_, std::char_traits<char>::length(t), t) == 0;
  }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) get();
  }

  // Whitespace, comments, processing instructions, stray text.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<!--")) {
        const int open_line = line_;
        while (!eof() && !starts_with("-->")) get();
        if (eof())
          fail(DescriptionError::Code::ParseError, open_line, "",
               "unterminated comment");
        pos_ += 3;
      } else if (starts_with("<?")) {
        while (!eof() && !starts_with("?>")) get();
        if (!eof()) pos_ += 2;
      } else if (!eof() && peek() != '<') {
        get();  // text content: ignored
      } else {
        return;
      }
    }
  }

  static bool name_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
           c == '-' || c == ':' || c == '.';
  }

  std::string read_name(const char* what) {
    std::string n;
    while (!eof() && name_char(peek())) n += get();
    if (n.empty()) fail_here(std::string("expected ") + what, "");
    return n;
  }

  std::string read_attr_value(const std::string& elem) {
    const char quote = peek();
    if (quote != '"' && quote != '\'')
      fail_here("attribute value must be quoted", elem);
    get();
    std::string v;
    while (!eof() && peek() != quote) {
      char c = get();
      if (c == '&') {
        std::string ent;
        while (!eof() && peek() != ';' && ent.size() < 8) ent += get();
        if (eof() || peek() != ';') fail_here("unterminated entity", elem);
        get();
        if (ent == "amp") c = '&';
        else if (ent == "lt") c = '<';
        else if (ent == "gt") c = '>';
        else if (ent == "quot") c = '"';
        else if (ent == "apos") c = '\'';
        else fail_here("unknown entity &" + ent + ";", elem);
      }
      v += c;
    }
    if (eof()) fail_here("unterminated attribute value", elem);
    get();
    return v;
  }

  XmlNode parse_element() {
    if (peek() != '<') fail_here("expected '<'", "");
    get();
    XmlNode node;
    node.line = line_;
    node.name = read_name("element name");
    for (;;) {
      skip_ws();
      if (eof())
        fail_here("unexpected end of input inside element '" + node.name + "'",
                  node.name);
      if (peek() == '/') {
        get();
        if (peek() != '>') fail_here("expected '/>'", node.name);
        get();
        return node;
      }
      if (peek() == '>') {
        get();
        parse_children(node);
        return node;
      }
      XmlAttr attr;
      attr.name = read_name("attribute name");
      if (node.find(attr.name))
        fail_here("duplicate attribute '" + attr.name + "'", node.name);
      skip_ws();
      if (peek() != '=') fail_here("expected '=' after attribute name", node.name);
      get();
      skip_ws();
      attr.value = read_attr_value(node.name);
      node.attrs.push_back(std::move(attr));
    }
  }

  void parse_children(XmlNode& node) {
    for (;;) {
      while (!eof() && peek() != '<') get();  // text content: ignored
      if (eof())
        fail_here("unexpected end of input inside element '" + node.name + "'",
                  node.name);
      if (starts_with("<!--")) {
        const int open_line = line_;
        while (!eof() && !starts_with("-->")) get();
        if (eof())
          fail(DescriptionError::Code::ParseError, open_line, node.name,
               "unterminated comment");
        pos_ += 3;
        continue;
      }
      if (starts_with("</")) {
        pos_ += 2;
        const std::string closing = read_name("closing tag name");
        if (closing != node.name)
          fail_here("mismatched closing tag '" + closing + "' for element '" +
                        node.name + "'",
                    node.name);
        skip_ws();
        if (peek() != '>') fail_here("expected '>'", node.name);
        get();
        return;
      }
      node.children.push_back(parse_element());
    }
  }

  const std::string& s_;
  size_t pos_ = 0;
  int line_ = 1;
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Typed attribute access.

const std::string& require_attr(const XmlNode& n, const char* name) {
  const std::string* v = n.find(name);
  if (!v)
    fail(DescriptionError::Code::ParseError, n.line, n.name,
         std::string("missing attribute '") + name + "'");
  return *v;
}

double parse_double(const XmlNode& n, const char* name, const std::string& s) {
  const char* c = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(c, &end);
  if (end == c || *end != '\0')
    fail(DescriptionError::Code::ParseError, n.line, n.name,
         std::string("attribute '") + name + "' is not a number: '" + s + "'");
  return v;
}

double num_attr(const XmlNode& n, const char* name) {
  return parse_double(n, name, require_attr(n, name));
}

Vec3 vec3_attr(const XmlNode& n, const char* name) {
  std::istringstream is(require_attr(n, name));
  std::string a, b, c, rest;
  if (!(is >> a >> b >> c) || (is >> rest))
    fail(DescriptionError::Code::ParseError, n.line, n.name,
         std::string("attribute '") + name + "' must hold three numbers");
  return {parse_double(n, name, a), parse_double(n, name, b),
          parse_double(n, name, c)};
}

bool bool_attr(const XmlNode& n, const char* name) {
  const std::string& s = require_attr(n, name);
  if (s == "true") return true;
  if (s == "false") return false;
  fail(DescriptionError::Code::ParseError, n.line, n.name,
       std::string("attribute '") + name + "' must be 'true' or 'false'");
}

MotorMode mode_attr(const XmlNode& n) {
  const std::string& s = require_attr(n, "mode");
  if (s == "position") return MotorMode::Position;
  if (s == "velocity") return MotorMode::Velocity;
  fail(DescriptionError::Code::ParseError, n.line, n.name,
       "mode must be 'position' or 'velocity'");
}

const char* mode_name(MotorMode m) {
  return m == MotorMode::Position ? "position" : "velocity";
}

// ---------------------------------------------------------------------------
// Emission.

void emit_inertial(std::ostringstream& os, double mass, const Mat3& inertia) {
  os << "    <inertial>\n"
     << "      <origin xyz=\"0 0 0\" rpy=\"0 0 0\"/>\n"
     << "      <mass value=\"" << fmt(mass) << "\"/>\n"
     << "      <inertia ixx=\"" << fmt(inertia(0, 0)) << "\" ixy=\""
     << fmt(inertia(0, 1)) << "\" ixz=\"" << fmt(inertia(0, 2)) << "\" iyy=\""
     << fmt(inertia(1, 1)) << "\" iyz=\"" << fmt(inertia(1, 2)) << "\" izz=\""
     << fmt(inertia(2, 2)) << "\"/>\n"
     << "    </inertial>\n";
  }

void emit_massless_link(std::ostringstream& os, const std::string& name) {
  os << "  <link name=\"" << name << "\">\n";
  emit_inertial(os, 0.0, Mat3::Zero());
  os << "  </link>\n";
}

void emit_joint(std::ostringstream& os, const std::string& name,
                const char* type, const Vec3& origin,
                const std::string& parent, const std::string& child,
                const Vec3* axis, const double* lower, const double* upper,
                const MotorSpec* motor) {
  os << "  <joint name=\"" << name << "\" type=\"" << type << "\">\n"
     << "    <origin xyz=\"" << fmt(origin) << "\" rpy=\"0 0 0\"/>\n"
     << "    <parent link=\"" << parent << "\"/>\n"
     << "    <child link=\"" << child << "\"/>\n";
  if (axis) os << "    <axis xyz=\"" << fmt(*axis) << "\"/>\n";
  if (motor) {
    os << "    <limit";
    if (lower) os << " lower=\"" << fmt(*lower) << "\" upper=\"" << fmt(*upper) << "\"";
    os << " effort=\"" << fmt(motor->torque_limit) << "\" velocity=\""
       << fmt(motor->velocity_limit) << "\"/>\n";
  }
  os << "  </joint>\n";
}

}  // namespace

Mat3 solid_box_inertia(double mass, const Vec3& dims) {
  const double x2 = sq(dims.x()), y2 = sq(dims.y()), z2 = sq(dims.z());
  Mat3 inertia = Mat3::Zero();
  inertia(0, 0) = mass / 12.0 * (y2 + z2);
  inertia(1, 1) = mass / 12.0 * (x2 + z2);
  inertia(2, 2) = mass / 12.0 * (x2 + y2);
  return inertia;
}

LimbKinematics RobotModel::make_limb_kinematics(int limb) const {
  const LimbModel& l = limbs.at(static_cast<size_t>(limb));
  return LimbKinematics(l.geometry, l.proximal_len, l.distal_len, limits);
}

Vec3 RobotModel::foot_in_body(int limb, const LimbCommandAngles& cmd,
                              ElbowBranch branch) const {
  Vec3 f = make_limb_kinematics(limb).foot_fk(cmd, branch).position;
  const LimbMount& mount = limbs.at(static_cast<size_t>(limb)).mount;
  if (mount.mirrored) f.y() = -f.y();
  return mount.translation + f;
}

RobotModel assemble_quadruped(const LinkageGeometry& geometry,
                              const BodyConfig& body, const MotorSpec& motor,
                              const std::optional<WheelOption>& wheel) {
  require_valid(geometry);
  RobotModel m;
  m.name = std::string("oclab_") + to_string(geometry.kind);
  m.body = body;
  const bool spherical = geometry.kind == LinkageKind::Spherical;
  const double prox = spherical ? 0.1 : geometry.link_len_a;
  const double dist = spherical ? 0.1 : geometry.link_len_b;
  const double hx = 0.5 * body.dimensions.x();
  const double hy = 0.5 * body.dimensions.y();
  const Vec3 corners[4] = {
      {hx, hy, 0.0}, {hx, -hy, 0.0}, {-hx, hy, 0.0}, {-hx, -hy, 0.0}};
  for (int i = 0; i < 4; ++i) {
    m.limbs[i].geometry = geometry;
    m.limbs[i].proximal_len = prox;
    m.limbs[i].distal_len = dist;
    m.limbs[i].mount = {corners[i], is_left(static_cast<LimbId>(i))};
  }
  m.actuators.fill(motor);
  m.wheel = wheel;
  (void)m.make_limb_kinematics(0);  // surface chain construction errors now
  return m;
}

SerialLimbParams serial_limb_params(const LimbModel& limb) {
  const bool spherical = limb.geometry.kind == LinkageKind::Spherical;
  SerialLimbParams p;
  p.thigh_dh_len = spherical ? 0.0 : limb.proximal_len;
  p.twist = limb.geometry.twist_alpha;
  p.shank_len =
      spherical ? limb.proximal_len + limb.distal_len : limb.distal_len;
  return p;
}

Vec3 serial_hip_axis() { return {0.0, -1.0, 0.0}; }

Vec3 serial_knee_axis(const SerialLimbParams& p, bool mirrored) {
  const double s = mirrored ? -std::sin(p.twist) : std::sin(p.twist);
  return {s, -std::cos(p.twist), 0.0};
}

Vec3 serial_foot_fk(const SerialLimbParams& p, double hip, double knee,
                    bool mirrored) {
  const Vec3 thigh_end(0.0, 0.0, -p.thigh_dh_len);
  const Vec3 foot_local =
      thigh_end + rotate(serial_knee_axis(p, mirrored), knee,
                         Vec3(0.0, 0.0, -p.shank_len));
  return rotate(serial_hip_axis(), hip, foot_local);
}

RobotModel to_pseudo_open_chain(const RobotModel& model) {
  if (model.chain == ChainForm::PseudoOpen) return model;
  constexpr int kGrid = 20;
  constexpr double kTol = 1e-6;
  for (int i = 0; i < 4; ++i) {
    const LimbKinematics kin = model.make_limb_kinematics(i);
    const SerialLimbParams p = serial_limb_params(model.limbs[i]);
    const auto [lo, hi] = kin.spread_range();
    for (int a = 0; a < kGrid; ++a) {
      const double spread = lo + (hi - lo) * (a + 0.5) / kGrid;
      const double swing_max = kin.limits().motor_range - 0.5 * spread;
      for (int b = 0; b < kGrid; ++b) {
        const double swing = -swing_max + 2.0 * swing_max * b / (kGrid - 1);
        const LimbCommandAngles cmd =
            LimbCommandAngles::from_swing_spread(swing, spread);
        const Vec3 closed = kin.foot_fk(cmd).position;
        const Vec3 open = serial_foot_fk(p, cmd.motor_left,
                                         kin.chain_angles(cmd).knee_left);
        if ((closed - open).norm() > kTol)
          throw KinematicsError(
              KinematicsError::Code::ConversionInfeasible,
              "pseudo-open chain deviates from the closed loop by " +
                  fmt((closed - open).norm()) + " m on limb " +
                  kLimbPrefix[i]);
      }
    }
  }
  RobotModel open = model;
  open.chain = ChainForm::PseudoOpen;
  return open;
}

std::array<LimbCommandAngles, 4> nominal_stance(const RobotModel& model) {
  std::array<LimbCommandAngles, 4> stance;
  for (int i = 0; i < 4; ++i)
    stance[i] = model.make_limb_kinematics(i).clamp_command(
        LimbCommandAngles::from_swing_spread(0.0, kNominalSpread));
  return stance;
}

double standing_height(const RobotModel& model) {
  const auto stance = nominal_stance(model);
  return -model.make_limb_kinematics(0).foot_fk(stance[0]).position.z();
}

FootholdMetrics foothold_width(const RobotModel& model,
                               const std::array<LimbCommandAngles, 4>& stance) {
  double left = 0.0, right = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double y = model.foot_in_body(i, stance[i]).y();
    (is_left(static_cast<LimbId>(i)) ? left : right) += 0.5 * y;
  }
  FootholdMetrics fm;
  fm.width = left - right;
  fm.body_width = model.body.dimensions.y();
  fm.ratio = fm.body_width > 0.0 ? fm.width / fm.body_width : 0.0;
  return fm;
}

std::string emit_description(const RobotModel& model) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<robot name=\"" << xml_escape(model.name) << "\">\n";

  os << "  <link name=\"base\">\n";
  emit_inertial(os, model.body.mass, model.body.inertia);
  os << "    <collision>\n"
     << "      <origin xyz=\"0 0 0\" rpy=\"0 0 0\"/>\n"
     << "      <geometry>\n"
     << "        <box size=\"" << fmt(model.body.dimensions) << "\"/>\n"
     << "      </geometry>\n"
     << "    </collision>\n"
     << "  </link>\n";

  const double motor_lo = -model.limits.motor_range;
  const double motor_hi = model.limits.motor_range;
  const double knee_lo = -kPi, knee_hi = kPi;
  for (int i = 0; i < 4; ++i) {
    const LimbModel& limb = model.limbs[i];
    const SerialLimbParams p = serial_limb_params(limb);
    const std::string prefix = kLimbPrefix[i];
    const Vec3 hip_axis = serial_hip_axis();
    const Vec3 knee_axis = serial_knee_axis(p, limb.mount.mirrored);
    emit_joint(os, prefix + "_hip", "revolute", limb.mount.translation, "base",
               prefix + "_thigh", &hip_axis, &motor_lo, &motor_hi,
               &model.actuators[2 * i]);
    emit_massless_link(os, prefix + "_thigh");
    emit_joint(os, prefix + "_knee", "revolute", Vec3(0, 0, -p.thigh_dh_len),
               prefix + "_thigh", prefix + "_shank", &knee_axis, &knee_lo,
               &knee_hi, &model.actuators[2 * i + 1]);
    emit_massless_link(os, prefix + "_shank");
    emit_joint(os, prefix + "_foot_joint", "fixed", Vec3(0, 0, -p.shank_len),
               prefix + "_shank", prefix + "_foot", nullptr, nullptr, nullptr,
               nullptr);
    emit_massless_link(os, prefix + "_foot");
    if (model.wheel) {
      emit_joint(os, prefix + "_wheel_joint", "continuous",
                 Vec3(0, 0, -p.shank_len), prefix + "_shank",
                 prefix + "_wheel", &knee_axis, nullptr, nullptr,
                 &model.wheel->motor);
      emit_massless_link(os, prefix + "_wheel");
    }
  }

  // Sidecar elements; not part of standard URDF, consumers ignore them.
  for (int i = 0; i < 4; ++i) {
    const LimbModel& limb = model.limbs[i];
    os << "  <loop_closure limb=\"" << kLimbPrefix[i] << "\" kind=\""
       << to_string(limb.geometry.kind) << "\" link_len_a=\""
       << fmt(limb.geometry.link_len_a) << "\" link_len_b=\""
       << fmt(limb.geometry.link_len_b) << "\" twist_alpha=\""
       << fmt(limb.geometry.twist_alpha) << "\" twist_beta=\""
       << fmt(limb.geometry.twist_beta) << "\" proximal_len=\""
       << fmt(limb.proximal_len) << "\" distal_len=\"" << fmt(limb.distal_len)
       << "\" mirrored=\"" << (limb.mount.mirrored ? "true" : "false")
       << "\"/>\n";
  }
  for (int i = 0; i < 8; ++i) {
    const MotorSpec& a = model.actuators[i];
    os << "  <actuation joint=\"" << kLimbPrefix[i / 2]
       << (i % 2 == 0 ? "_hip" : "_knee") << "\" kp=\"" << fmt(a.kp)
       << "\" kd=\"" << fmt(a.kd) << "\" mode=\"" << mode_name(a.mode)
       << "\"/>\n";
  }
  if (model.wheel) {
    const MotorSpec& w = model.wheel->motor;
    os << "  <wheel_spec radius=\"" << fmt(model.wheel->radius)
       << "\" torque_limit=\"" << fmt(w.torque_limit) << "\" velocity_limit=\""
       << fmt(w.velocity_limit) << "\" kp=\"" << fmt(w.kp) << "\" kd=\""
       << fmt(w.kd) << "\" mode=\"" << mode_name(w.mode) << "\"/>\n";
  }
  os << "  <joint_limits motor_range=\"" << fmt(model.limits.motor_range)
     << "\" spread_min=\"" << fmt(model.limits.spread_min)
     << "\" spread_max=\"" << fmt(model.limits.spread_max)
     << "\" feasibility_margin=\"" << fmt(model.limits.feasibility_margin)
     << "\"/>\n";
  os << "  <model_meta chain=\""
     << (model.chain == ChainForm::ClosedLoop ? "closed_loop" : "pseudo_open")
     << "\"/>\n";
  os << "</robot>\n";
  return os.str();
}

namespace {

// Mass and full inertia tensor of a link; throws MissingInertial when the
// element is absent or the mass is negative.
void parse_inertial(const XmlNode& link, double* mass, Mat3* inertia) {
  const std::string& name = require_attr(link, "name");
  const XmlNode* in = link.child("inertial");
  if (!in)
    fail(DescriptionError::Code::MissingInertial, link.line, name,
         "link has no <inertial>");
  const XmlNode* mass_el = in->child("mass");
  if (!mass_el)
    fail(DescriptionError::Code::MissingInertial, in->line, name,
         "<inertial> has no <mass>");
  const double m = num_attr(*mass_el, "value");
  if (m < 0.0)
    fail(DescriptionError::Code::MissingInertial, mass_el->line, name,
         "mass must be non-negative, got " + fmt(m));
  if (mass) *mass = m;
  const XmlNode* it = in->child("inertia");
  if (!it)
    fail(DescriptionError::Code::MissingInertial, in->line, name,
         "<inertial> has no <inertia>");
  if (inertia) {
    Mat3& t = *inertia;
    t(0, 0) = num_attr(*it, "ixx");
    t(1, 1) = num_attr(*it, "iyy");
    t(2, 2) = num_attr(*it, "izz");
    t(0, 1) = t(1, 0) = num_attr(*it, "ixy");
    t(0, 2) = t(2, 0) = num_attr(*it, "ixz");
    t(1, 2) = t(2, 1) = num_attr(*it, "iyz");
  }
}

struct JointView {
  const XmlNode* node = nullptr;
  std::string type;
  Vec3 origin = Vec3::Zero();
  std::string parent, child;
};

JointView view_joint(const XmlNode& j) {
  JointView v;
  v.node = &j;
  v.type = require_attr(j, "type");
  const XmlNode* origin = j.child("origin");
  if (!origin)
    fail(DescriptionError::Code::ParseError, j.line, require_attr(j, "name"),
         "joint has no <origin>");
  v.origin = vec3_attr(*origin, "xyz");
  if (const std::string* rpy = origin->find("rpy")) {
    std::istringstream is(*rpy);
    double r = 0, p = 0, y = 0;
    is >> r >> p >> y;
    if (std::abs(r) > kXmlTol || std::abs(p) > kXmlTol || std::abs(y) > kXmlTol)
      fail(DescriptionError::Code::ParseError, origin->line,
           require_attr(j, "name"),
           "rotated joint origins are not part of this dialect");
  }
  const XmlNode* parent = j.child("parent");
  const XmlNode* child = j.child("child");
  if (!parent || !child)
    fail(DescriptionError::Code::ParseError, j.line, require_attr(j, "name"),
         "joint must name <parent> and <child>");
  v.parent = require_attr(*parent, "link");
  v.child = require_attr(*child, "link");
  return v;
}

Vec3 joint_axis(const XmlNode& j) {
  const std::string& name = require_attr(j, "name");
  const XmlNode* axis = j.child("axis");
  if (!axis)
    fail(DescriptionError::Code::BadJointAxis, j.line, name,
         "movable joint has no <axis>");
  const Vec3 a = vec3_attr(*axis, "xyz");
  if (std::abs(a.norm() - 1.0) > kXmlTol)
    fail(DescriptionError::Code::BadJointAxis, axis->line, name,
         "joint axis must be a unit vector");
  return a;
}

void check_axis(const XmlNode& j, const Vec3& expected, const char* what) {
  const Vec3 a = joint_axis(j);
  if ((a - expected).norm() > kXmlTol)
    fail(DescriptionError::Code::BadJointAxis, j.line, require_attr(j, "name"),
         std::string(what) + ": expected axis (" + fmt(expected) + "), got (" +
             fmt(a) + ")");
}

void read_limit(const XmlNode& j, MotorSpec* spec) {
  const XmlNode* limit = j.child("limit");
  if (!limit)
    fail(DescriptionError::Code::ParseError, j.line, require_attr(j, "name"),
         "joint has no <limit>");
  spec->torque_limit = num_attr(*limit, "effort");
  spec->velocity_limit = num_attr(*limit, "velocity");
}

}  // namespace

RobotModel parse_description(const std::string& text) {
  XmlReader reader(text);
  const XmlNode root = reader.parse_document();
  if (root.name != "robot")
    fail(DescriptionError::Code::ParseError, root.line, root.name,
         "expected <robot> root element");

  RobotModel m;
  m.name = require_attr(root, "name");

  std::map<std::string, const XmlNode*> links, joints;
  std::map<std::string, const XmlNode*> loops;       // by limb prefix
  std::map<std::string, const XmlNode*> actuations;  // by joint name
  const XmlNode* limits_el = nullptr;
  const XmlNode* meta_el = nullptr;
  const XmlNode* wheel_el = nullptr;
  for (const XmlNode& c : root.children) {
    if (c.name == "link") {
      links[require_attr(c, "name")] = &c;
    } else if (c.name == "joint") {
      joints[require_attr(c, "name")] = &c;
    } else if (c.name == "loop_closure") {
      if (!loops.emplace(require_attr(c, "limb"), &c).second)
        fail(DescriptionError::Code::ParseError, c.line, c.name,
             "duplicate loop_closure for limb " + require_attr(c, "limb"));
    } else if (c.name == "actuation") {
      actuations[require_attr(c, "joint")] = &c;
    } else if (c.name == "joint_limits") {
      limits_el = &c;
    } else if (c.name == "model_meta") {
      meta_el = &c;
    } else if (c.name == "wheel_spec") {
      wheel_el = &c;
    } else {
      fail(DescriptionError::Code::ParseError, c.line, c.name,
           "unexpected element");
    }
  }

  const auto require_link = [&](const std::string& name) -> const XmlNode& {
    const auto it = links.find(name);
    if (it == links.end())
      fail(DescriptionError::Code::ParseError, root.line, root.name,
           "missing <link name=\"" + name + "\">");
    return *it->second;
  };
  const auto require_joint = [&](const std::string& name) -> const XmlNode& {
    const auto it = joints.find(name);
    if (it == joints.end())
      fail(DescriptionError::Code::ParseError, root.line, root.name,
           "missing <joint name=\"" + name + "\">");
    return *it->second;
  };

  if (!limits_el)
    fail(DescriptionError::Code::ParseError, root.line, root.name,
         "missing <joint_limits>");
  m.limits.motor_range = num_attr(*limits_el, "motor_range");
  m.limits.spread_min = num_attr(*limits_el, "spread_min");
  m.limits.spread_max = num_attr(*limits_el, "spread_max");
  m.limits.feasibility_margin = num_attr(*limits_el, "feasibility_margin");

  if (!meta_el)
    fail(DescriptionError::Code::ParseError, root.line, root.name,
         "missing <model_meta>");
  const std::string& chain = require_attr(*meta_el, "chain");
  if (chain == "closed_loop") m.chain = ChainForm::ClosedLoop;
  else if (chain == "pseudo_open") m.chain = ChainForm::PseudoOpen;
  else
    fail(DescriptionError::Code::ParseError, meta_el->line, meta_el->name,
         "chain must be 'closed_loop' or 'pseudo_open'");

  if (wheel_el) {
    WheelOption w;
    w.radius = num_attr(*wheel_el, "radius");
    w.motor.torque_limit = num_attr(*wheel_el, "torque_limit");
    w.motor.velocity_limit = num_attr(*wheel_el, "velocity_limit");
    w.motor.kp = num_attr(*wheel_el, "kp");
    w.motor.kd = num_attr(*wheel_el, "kd");
    w.motor.mode = mode_attr(*wheel_el);
    m.wheel = w;
  }

  const XmlNode& base = require_link("base");
  parse_inertial(base, &m.body.mass, &m.body.inertia);
  if (m.body.mass <= 0.0)
    fail(DescriptionError::Code::MissingInertial, base.line, "base",
         "base mass must be positive");
  const XmlNode* collision = base.child("collision");
  const XmlNode* geometry = collision ? collision->child("geometry") : nullptr;
  const XmlNode* box = geometry ? geometry->child("box") : nullptr;
  if (!box)
    fail(DescriptionError::Code::ParseError, base.line, "base",
         "base link needs a <collision><geometry><box> body shape");
  m.body.dimensions = vec3_attr(*box, "size");

  for (int i = 0; i < 4; ++i) {
    const std::string prefix = kLimbPrefix[i];
    LimbModel& limb = m.limbs[i];

    const auto loop_it = loops.find(prefix);
    if (loop_it == loops.end())
      fail(DescriptionError::Code::ParseError, root.line, root.name,
           "missing <loop_closure limb=\"" + prefix + "\">");
    const XmlNode& loop = *loop_it->second;
    limb.geometry.kind = linkage_kind_from_string(require_attr(loop, "kind"));
    limb.geometry.link_len_a = num_attr(loop, "link_len_a");
    limb.geometry.link_len_b = num_attr(loop, "link_len_b");
    limb.geometry.twist_alpha = num_attr(loop, "twist_alpha");
    limb.geometry.twist_beta = num_attr(loop, "twist_beta");
    limb.proximal_len = num_attr(loop, "proximal_len");
    limb.distal_len = num_attr(loop, "distal_len");
    limb.mount.mirrored = bool_attr(loop, "mirrored");
    require_valid(limb.geometry);

    const SerialLimbParams p = serial_limb_params(limb);

    const JointView hip = view_joint(require_joint(prefix + "_hip"));
    if (hip.type != "revolute" || hip.parent != "base" ||
        hip.child != prefix + "_thigh")
      fail(DescriptionError::Code::ParseError, hip.node->line, prefix + "_hip",
           "hip must be a revolute joint from base to " + prefix + "_thigh");
    limb.mount.translation = hip.origin;
    check_axis(*hip.node, serial_hip_axis(), "hip");
    read_limit(*hip.node, &m.actuators[2 * i]);

    const JointView knee = view_joint(require_joint(prefix + "_knee"));
    if (knee.type != "revolute" || knee.parent != prefix + "_thigh" ||
        knee.child != prefix + "_shank")
      fail(DescriptionError::Code::ParseError, knee.node->line,
           prefix + "_knee", "knee must be a revolute joint from " + prefix +
                                 "_thigh to " + prefix + "_shank");
    if ((knee.origin - Vec3(0, 0, -p.thigh_dh_len)).norm() > kXmlTol)
      fail(DescriptionError::Code::ParseError, knee.node->line,
           prefix + "_knee", "knee origin disagrees with the loop geometry");
    check_axis(*knee.node, serial_knee_axis(p, limb.mount.mirrored),
               "knee chirality");
    read_limit(*knee.node, &m.actuators[2 * i + 1]);

    const JointView foot = view_joint(require_joint(prefix + "_foot_joint"));
    if (foot.type != "fixed" || foot.parent != prefix + "_shank" ||
        foot.child != prefix + "_foot")
      fail(DescriptionError::Code::ParseError, foot.node->line,
           prefix + "_foot_joint", "foot joint must fix " + prefix +
                                       "_foot to " + prefix + "_shank");
    if ((foot.origin - Vec3(0, 0, -p.shank_len)).norm() > kXmlTol)
      fail(DescriptionError::Code::ParseError, foot.node->line,
           prefix + "_foot_joint",
           "foot offset disagrees with the loop geometry");

    if (m.wheel) {
      const JointView wheel = view_joint(require_joint(prefix + "_wheel_joint"));
      if (wheel.type != "continuous" || wheel.parent != prefix + "_shank" ||
          wheel.child != prefix + "_wheel")
        fail(DescriptionError::Code::ParseError, wheel.node->line,
             prefix + "_wheel_joint", "wheel must be a continuous joint on " +
                                          prefix + "_shank");
      check_axis(*wheel.node, serial_knee_axis(p, limb.mount.mirrored),
                 "wheel axis");
      parse_inertial(require_link(prefix + "_wheel"), nullptr, nullptr);
    }

    for (const char* part : {"_thigh", "_shank", "_foot"})
      parse_inertial(require_link(prefix + part), nullptr, nullptr);

    const auto read_actuation = [&](const std::string& joint, MotorSpec* spec) {
      const auto it = actuations.find(joint);
      if (it == actuations.end())
        fail(DescriptionError::Code::ParseError, root.line, root.name,
             "missing <actuation joint=\"" + joint + "\">");
      spec->kp = num_attr(*it->second, "kp");
      spec->kd = num_attr(*it->second, "kd");
      spec->mode = mode_attr(*it->second);
    };
    read_actuation(prefix + "_hip", &m.actuators[2 * i]);
    read_actuation(prefix + "_knee", &m.actuators[2 * i + 1]);
  }

  // The four mounts must be mirror-symmetric pairs.
  for (int pair = 0; pair < 2; ++pair) {
    const Vec3& l = m.limbs[2 * pair].mount.translation;
    const Vec3& r = m.limbs[2 * pair + 1].mount.translation;
    if (std::abs(l.x() - r.x()) > kXmlTol || std::abs(l.y() + r.y()) > kXmlTol ||
        std::abs(l.z() - r.z()) > kXmlTol)
      fail(DescriptionError::Code::ParseError, root.line, root.name,
           "left/right limb mounts are not mirror-symmetric");
  }

  return m;
}

}  // namespace ocl
