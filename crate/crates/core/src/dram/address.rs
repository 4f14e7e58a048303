use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, Geometry, MappingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapField {
    Channel,
    Rank,
    Bank,
    /// Row within the bank (subarray index and row within subarray).
    Row,
    Column,
    /// Byte within a cache line.
    Offset,
}

const ALL_FIELDS: [MapField; 6] = [
    MapField::Channel,
    MapField::Rank,
    MapField::Bank,
    MapField::Row,
    MapField::Column,
    MapField::Offset,
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddressError {
    #[error("address {addr:#x} is outside the {limit:#x}-byte address space")]
    OutOfRange { addr: u64, limit: u64 },
    #[error("coordinate {field:?} = {value} exceeds its range of {max}")]
    Coordinate {
        field: MapField,
        value: usize,
        max: usize,
    },
}

/// Location of a byte in the DRAM subsystem. `row` is the row inside its
/// subarray; [`Coordinates::bank_row`] gives the row inside the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize)]
pub struct Coordinates {
    pub channel: usize,
    pub rank: usize,
    pub bank: usize,
    pub subarray: usize,
    pub row: usize,
    pub column: usize,
    pub offset: usize,
}

impl Coordinates {
    pub fn bank_row(&self, g: &Geometry) -> usize {
        self.subarray * g.rows_per_subarray + self.row
    }

    /// Flat bank index inside the channel.
    pub fn bank_index(&self, g: &Geometry) -> usize {
        self.rank * g.banks_per_rank + self.bank
    }

    pub fn same_bank(&self, other: &Coordinates) -> bool {
        self.channel == other.channel && self.rank == other.rank && self.bank == other.bank
    }

    pub fn same_row(&self, other: &Coordinates) -> bool {
        self.same_bank(other) && self.subarray == other.subarray && self.row == other.row
    }

    /// Start of the row that contains this location.
    pub fn row_start(&self) -> Coordinates {
        Coordinates {
            column: 0,
            offset: 0,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slice {
    field: MapField,
    shift: u32,
    bits: u32,
}

/// Bit-sliced physical address mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressMapping {
    slices: Vec<Slice>,
    geometry: Geometry,
    total_bits: u32,
}

fn field_bits(field: MapField, g: &Geometry) -> Result<u32, ConfigError> {
    let (count, name) = match field {
        MapField::Channel => (g.channels, "geometry.channels"),
        MapField::Rank => (g.ranks_per_channel, "geometry.ranks_per_channel"),
        MapField::Bank => (g.banks_per_rank, "geometry.banks_per_rank"),
        MapField::Row => (g.rows_per_bank(), "geometry.rows_per_subarray"),
        MapField::Column => (g.columns_per_row, "geometry.columns_per_row"),
        MapField::Offset => (g.cacheline_bytes, "geometry.cacheline_bytes"),
    };
    if !count.is_power_of_two() {
        return Err(ConfigError::Invalid {
            field: name.to_string(),
            reason: format!("{count} is not a power of two, which bit-sliced mapping requires"),
        });
    }
    Ok(count.trailing_zeros())
}

impl AddressMapping {
    pub fn new(mapping: &MappingConfig, g: &Geometry) -> Result<Self, ConfigError> {
        for f in ALL_FIELDS {
            let n = mapping.order.iter().filter(|&&x| x == f).count();
            if n != 1 {
                return Err(ConfigError::Invalid {
                    field: "mapping.order".to_string(),
                    reason: format!("field {f:?} appears {n} times, expected once"),
                });
            }
        }
        if !g.subarrays_per_bank.is_power_of_two() {
            return Err(ConfigError::Invalid {
                field: "geometry.subarrays_per_bank".to_string(),
                reason: "must be a power of two".to_string(),
            });
        }
        let mut slices = Vec::with_capacity(6);
        let mut shift = 0;
        for &field in mapping.order.iter().rev() {
            let bits = field_bits(field, g)?;
            slices.push(Slice { field, shift, bits });
            shift += bits;
        }
        if shift > 63 {
            return Err(ConfigError::Invalid {
                field: "geometry".to_string(),
                reason: format!("address needs {shift} bits"),
            });
        }
        Ok(AddressMapping {
            slices,
            geometry: g.clone(),
            total_bits: shift,
        })
    }

    pub fn address_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn capacity(&self) -> u64 {
        1u64 << self.total_bits
    }

    /// Shift of the lowest bit of `field`.
    pub fn shift_of(&self, field: MapField) -> u32 {
        self.slices
            .iter()
            .find(|s| s.field == field)
            .map(|s| s.shift)
            .expect("every field is mapped")
    }

    pub fn decode(&self, addr: u64) -> Result<Coordinates, AddressError> {
        if addr >= self.capacity() {
            return Err(AddressError::OutOfRange {
                addr,
                limit: self.capacity(),
            });
        }
        let mut c = Coordinates::default();
        let mut bank_row = 0;
        for s in &self.slices {
            let v = ((addr >> s.shift) & ((1u64 << s.bits) - 1)) as usize;
            match s.field {
                MapField::Channel => c.channel = v,
                MapField::Rank => c.rank = v,
                MapField::Bank => c.bank = v,
                MapField::Row => bank_row = v,
                MapField::Column => c.column = v,
                MapField::Offset => c.offset = v,
            }
        }
        c.subarray = bank_row / self.geometry.rows_per_subarray;
        c.row = bank_row % self.geometry.rows_per_subarray;
        Ok(c)
    }

    pub fn encode(&self, c: &Coordinates) -> Result<u64, AddressError> {
        let g = &self.geometry;
        let checks = [
            (MapField::Channel, c.channel, g.channels),
            (MapField::Rank, c.rank, g.ranks_per_channel),
            (MapField::Bank, c.bank, g.banks_per_rank),
            (MapField::Row, c.subarray, g.subarrays_per_bank),
            (MapField::Row, c.row, g.rows_per_subarray),
            (MapField::Column, c.column, g.columns_per_row),
            (MapField::Offset, c.offset, g.cacheline_bytes),
        ];
        for (field, value, max) in checks {
            if value >= max {
                return Err(AddressError::Coordinate { field, value, max });
            }
        }
        let mut addr = 0u64;
        for s in &self.slices {
            let v = match s.field {
                MapField::Channel => c.channel,
                MapField::Rank => c.rank,
                MapField::Bank => c.bank,
                MapField::Row => c.bank_row(g),
                MapField::Column => c.column,
                MapField::Offset => c.offset,
            } as u64;
            addr |= v << s.shift;
        }
        Ok(addr)
    }
}
