//! Internal units: time in ps, energies and rates in meV.
//!
//! A rate `Γ` quoted in meV corresponds to `Γ / HBAR` in ps⁻¹.

/// Reduced Planck constant in meV·ps.
pub const HBAR: f64 = 0.658_211_956_9;

/// `h·c` in eV·nm, used for wavelength/energy conversion.
const HC_EV_NM: f64 = 1_239.841_984;

pub fn fs_to_ps(fs: f64) -> f64 {
    fs * 1e-3
}

pub fn ps_to_fs(ps: f64) -> f64 {
    ps * 1e3
}

pub fn ev_to_mev(ev: f64) -> f64 {
    ev * 1e3
}

pub fn mev_to_ev(mev: f64) -> f64 {
    mev * 1e-3
}

pub fn nev_to_mev(nev: f64) -> f64 {
    nev * 1e-6
}

pub fn mev_to_nev(mev: f64) -> f64 {
    mev * 1e6
}

/// Photon energy in meV for a vacuum wavelength in nm.
pub fn wavelength_nm_to_mev(nm: f64) -> f64 {
    ev_to_mev(HC_EV_NM / nm)
}

pub fn mev_to_wavelength_nm(mev: f64) -> f64 {
    HC_EV_NM / mev_to_ev(mev)
}

/// Angular rate in ps⁻¹ for an energy in meV.
pub fn mev_to_rate(mev: f64) -> f64 {
    mev / HBAR
}

pub fn rate_to_mev(rate: f64) -> f64 {
    rate * HBAR
}

/// Decay rate `κ = ħ/T` (meV) for a photon lifetime `T` in ps.
pub fn lifetime_to_mev(lifetime_ps: f64) -> f64 {
    HBAR / lifetime_ps
}
