//! Sparse MIMO array geometry: 8 Tx + 16 Rx phase centers on an arc (or a
//! plane), and the 128 time-multiplexed virtual channels they form.
//!
//! Coordinates are scene-center origin, +z vertical, +y toward the scene, so
//! the array sits at negative y. The planar layout places elements on a
//! vertical line; with virtual spacing `d = virtual_span / 128` the receivers
//! sit at `(n - 7.5) * 2d` and the transmitters at `(m - 3.5) * 32d`, which
//! makes the 128 Tx/Rx midpoints `d * (16m + n - 63.5)` a uniform grid
//! covering every slot exactly once. Arc mode wraps the same linear
//! coordinates onto a circle of radius `arc_radius` centered on the scene
//! (arc length, not chord), so every element is equidistant from the scene
//! center.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::fingerprint::sha256;
use crate::simulator::ChannelErrorModel;
use crate::Vec3;

pub const N_TX: usize = 8;
pub const N_RX: usize = 16;
pub const N_VIRTUAL: usize = N_TX * N_RX;

/// Tolerance for the arc-distance and uniform-spacing invariants (meters).
pub const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AntennaRole {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutMode {
    Arc,
    Planar,
}

impl LayoutMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "arc" | "ARC" => Ok(LayoutMode::Arc),
            "planar" | "PLANAR" => Ok(LayoutMode::Planar),
            _ => Err(Error::Config(format!("unknown layout mode `{s}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LayoutMode::Arc => "arc",
            LayoutMode::Planar => "planar",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AntennaElement {
    /// 0-based index within the role.
    pub index: usize,
    pub role: AntennaRole,
    /// Phase-center position in meters, scene-center origin.
    pub position: Vec3,
}

#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    pub tx: Vec<AntennaElement>,
    pub rx: Vec<AntennaElement>,
    /// Array-to-scene-center standoff; also the arc radius in arc mode.
    pub arc_radius: f64,
    /// Extent budget of the virtual aperture (meters); spacing is span/128.
    pub virtual_span: f64,
    pub layout_mode: LayoutMode,
}

/// One Tx/Rx pairing in the time-multiplexing sequence.
#[derive(Debug, Clone, Copy)]
pub struct VirtualChannel {
    pub tx_index: usize,
    pub rx_index: usize,
    /// Order of time multiplexing, `16 * tx_index + rx_index`.
    pub sequence_slot: usize,
    /// Midpoint of the Tx and Rx positions. Reporting only: simulation and
    /// imaging always use the exact bistatic ranges.
    pub effective_center: Vec3,
}

#[derive(Debug, Clone, Copy)]
pub struct GeometryConfig {
    pub arc_radius: f64,
    pub virtual_span: f64,
    pub layout_mode: LayoutMode,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            arc_radius: 1.5,
            virtual_span: 0.5,
            layout_mode: LayoutMode::Arc,
        }
    }
}

impl GeometryConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = GeometryConfig::default();
        Ok(Self {
            arc_radius: cfg.f64_or("geometry.arc_radius", d.arc_radius)?,
            virtual_span: cfg.f64_or("geometry.virtual_span", d.virtual_span)?,
            layout_mode: match cfg.get("geometry.layout") {
                Some(s) => LayoutMode::parse(s)?,
                None => d.layout_mode,
            },
        })
    }
}

/// Build the default 8 Tx / 16 Rx layout from a geometry config.
pub fn build_default_geometry(config: &GeometryConfig) -> Result<ArrayGeometry> {
    if !(config.arc_radius > 0.0) || !(config.virtual_span > 0.0) {
        return Err(Error::Config(
            "geometry: arc_radius and virtual_span must be positive".into(),
        ));
    }
    let delta = config.virtual_span / N_VIRTUAL as f64;
    let tx_linear: Vec<f64> = (0..N_TX)
        .map(|m| (m as f64 - (N_TX as f64 - 1.0) / 2.0) * (2 * N_RX) as f64 * delta)
        .collect();
    let rx_linear: Vec<f64> = (0..N_RX)
        .map(|n| (n as f64 - (N_RX as f64 - 1.0) / 2.0) * 2.0 * delta)
        .collect();

    let place = |s: f64| -> Vec3 {
        match config.layout_mode {
            LayoutMode::Planar => Vec3::new(0.0, -config.arc_radius, s),
            LayoutMode::Arc => {
                // Linear coordinate maps to arc length on the scene-centered
                // circle, not to the chord.
                let theta = s / config.arc_radius;
                Vec3::new(
                    0.0,
                    -config.arc_radius * theta.cos(),
                    config.arc_radius * theta.sin(),
                )
            }
        }
    };

    let tx = tx_linear
        .iter()
        .enumerate()
        .map(|(i, &s)| AntennaElement {
            index: i,
            role: AntennaRole::Tx,
            position: place(s),
        })
        .collect();
    let rx = rx_linear
        .iter()
        .enumerate()
        .map(|(i, &s)| AntennaElement {
            index: i,
            role: AntennaRole::Rx,
            position: place(s),
        })
        .collect();

    let geom = ArrayGeometry {
        tx,
        rx,
        arc_radius: config.arc_radius,
        virtual_span: config.virtual_span,
        layout_mode: config.layout_mode,
    };
    geom.validate()?;
    Ok(geom)
}

impl ArrayGeometry {
    /// Check element counts plus the layout invariant: arc mode requires all
    /// element ranges to the scene center to equal `arc_radius`; planar mode
    /// requires the 128 virtual centers to form a uniform 1D grid.
    pub fn validate(&self) -> Result<()> {
        if self.tx.len() != N_TX || self.rx.len() != N_RX {
            return Err(Error::Geometry(format!(
                "expected {} Tx / {} Rx elements, got {} / {}",
                N_TX,
                N_RX,
                self.tx.len(),
                self.rx.len()
            )));
        }
        match self.layout_mode {
            LayoutMode::Arc => {
                for e in self.tx.iter().chain(self.rx.iter()) {
                    let r = e.position.norm();
                    if (r - self.arc_radius).abs() > GEOMETRY_TOL {
                        return Err(Error::Geometry(format!(
                            "{:?} element {} violates arc constraint: range {} vs radius {}",
                            e.role, e.index, r, self.arc_radius
                        )));
                    }
                }
            }
            LayoutMode::Planar => {
                let mut z: Vec<f64> = self
                    .virtual_channels()
                    .iter()
                    .map(|v| v.effective_center.z)
                    .collect();
                z.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let spacing = self.virtual_span / N_VIRTUAL as f64;
                for w in z.windows(2) {
                    if ((w[1] - w[0]) - spacing).abs() > GEOMETRY_TOL {
                        return Err(Error::Geometry(format!(
                            "virtual centers not uniform: gap {} vs spacing {}",
                            w[1] - w[0],
                            spacing
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// The 128 virtual channels in time-multiplexing order: outer loop over
    /// Tx, inner over Rx, so `sequence_slot = 16 * tx_index + rx_index`.
    pub fn virtual_channels(&self) -> Vec<VirtualChannel> {
        let mut out = Vec::with_capacity(N_VIRTUAL);
        for (ti, t) in self.tx.iter().enumerate() {
            for (ri, r) in self.rx.iter().enumerate() {
                out.push(VirtualChannel {
                    tx_index: ti,
                    rx_index: ri,
                    sequence_slot: self.rx.len() * ti + ri,
                    effective_center: (t.position + r.position) / 2.0,
                });
            }
        }
        out
    }

    /// Shift every phase center by its per-antenna position offset. The
    /// amplitude/phase/delay entries of the model are untouched here; they
    /// are consumed by the echo simulator.
    pub fn perturb(&self, errors: &ChannelErrorModel) -> Result<ArrayGeometry> {
        errors.validate(self.tx.len() + self.rx.len())?;
        let mut out = self.clone();
        for (i, e) in out.tx.iter_mut().enumerate() {
            e.position += errors.tx(i).position_offset;
        }
        for (i, e) in out.rx.iter_mut().enumerate() {
            e.position += errors.rx(i).position_offset;
        }
        Ok(out)
    }

    /// Flat antenna indexing used by error models and calibration:
    /// 0..8 are Tx0..Tx7, 8..24 are Rx0..Rx15.
    pub fn antenna_position(&self, flat: usize) -> Vec3 {
        if flat < N_TX {
            self.tx[flat].position
        } else {
            self.rx[flat - N_TX].position
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.tx.len() + self.rx.len()
    }

    pub fn to_config(&self) -> Config {
        let mut cfg = Config::new();
        cfg.set("geometry.layout", self.layout_mode.as_str());
        cfg.set_f64("geometry.arc_radius", self.arc_radius);
        cfg.set_f64("geometry.virtual_span", self.virtual_span);
        for e in &self.tx {
            cfg.set(
                &format!("tx.{}.position", e.index),
                &format!("{} {} {}", e.position.x, e.position.y, e.position.z),
            );
        }
        for e in &self.rx {
            cfg.set(
                &format!("rx.{}.position", e.index),
                &format!("{} {} {}", e.position.x, e.position.y, e.position.z),
            );
        }
        cfg
    }

    pub fn from_config(cfg: &Config) -> Result<ArrayGeometry> {
        let layout_mode = LayoutMode::parse(cfg.require("geometry.layout")?)?;
        let arc_radius = cfg.f64_or("geometry.arc_radius", 1.5)?;
        let virtual_span = cfg.f64_or("geometry.virtual_span", 0.5)?;
        let mut tx = Vec::new();
        let mut rx = Vec::new();
        for i in 0..N_TX {
            let key = format!("tx.{i}.position");
            let position = cfg
                .get_vec3(&key)?
                .ok_or_else(|| Error::Geometry(format!("missing `{key}`")))?;
            tx.push(AntennaElement {
                index: i,
                role: AntennaRole::Tx,
                position,
            });
        }
        for i in 0..N_RX {
            let key = format!("rx.{i}.position");
            let position = cfg
                .get_vec3(&key)?
                .ok_or_else(|| Error::Geometry(format!("missing `{key}`")))?;
            rx.push(AntennaElement {
                index: i,
                role: AntennaRole::Rx,
                position,
            });
        }
        Ok(ArrayGeometry {
            tx,
            rx,
            arc_radius,
            virtual_span,
            layout_mode,
        })
    }

    /// Identifies the geometry in cube headers and calibration solutions.
    pub fn fingerprint(&self) -> [u8; 32] {
        sha256(self.to_config().to_text().as_bytes())
    }
}
