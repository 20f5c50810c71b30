use super::bus::{Bus, BusDevice, Fault, Transaction};
use super::events::SimEvent;
use super::{BusError, BusTimingConfig};
use crate::wire_protocol::{
    assign_addresses, pressure_to_word, word_to_pressure, DataWord, DeviceAddress, PAYLOAD_WORDS,
};

/// Host-side view of the bus: commands and measurements in gauge kPa,
/// devices by index. Device `i` is expected at address `0xFFFF - i`,
/// whether or not anything answers there.
pub struct PressureMaster<D: BusDevice> {
    bus: Bus<D>,
    expected: Vec<DeviceAddress>,
    last_commands: Vec<[DataWord; PAYLOAD_WORDS]>,
}

impl<D: BusDevice> PressureMaster<D> {
    /// Expect exactly the devices given.
    pub fn new(config: BusTimingConfig, devices: Vec<D>) -> Result<Self, BusError> {
        let n = devices.len();
        Self::with_device_count(config, devices, n)
    }

    /// Expect `num_devices` devices, independent of what is attached.
    pub fn with_device_count(config: BusTimingConfig, devices: Vec<D>, num_devices: usize) -> Result<Self, BusError> {
        if num_devices == 0 {
            return Err(BusError::InvalidParameter("num_devices must be at least 1".into()));
        }
        let expected = assign_addresses(num_devices)?;
        Ok(Self {
            bus: Bus::new(config, devices)?,
            expected,
            last_commands: vec![[DataWord(0); PAYLOAD_WORDS]; num_devices],
        })
    }

    pub fn bus(&self) -> &Bus<D> {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut Bus<D> {
        &mut self.bus
    }

    pub fn device_count(&self) -> usize {
        self.last_commands.len()
    }

    /// Expected addresses, by index.
    pub fn addresses(&self) -> Vec<DeviceAddress> {
        self.expected.clone()
    }

    pub fn events(&self) -> &[SimEvent] {
        self.bus.events()
    }

    pub fn inject_fault(&mut self, fault: Fault) -> Result<(), BusError> {
        self.bus.inject_fault(fault)
    }

    fn address_of(&self, index: usize) -> Result<u16, BusError> {
        self.expected
            .get(index)
            .map(|a| a.value)
            .ok_or_else(|| {
                BusError::InvalidParameter(format!(
                    "device index {index} out of range (0..{})",
                    self.device_count()
                ))
            })
    }

    /// Poll every expected device once with its current commands. The first
    /// device that fails to answer is reported by address.
    pub fn ping_devices(&mut self) -> Result<Vec<DeviceAddress>, BusError> {
        for i in 0..self.device_count() {
            let addr = self.address_of(i)?;
            self.bus.transact(addr, self.last_commands[i])?;
        }
        Ok(self.addresses())
    }

    /// Send four chamber pressure commands (gauge kPa) to device `index`.
    pub fn set_pressure_commands(
        &mut self,
        index: usize,
        pressures_kpa: [f64; PAYLOAD_WORDS],
    ) -> Result<Transaction, BusError> {
        let addr = self.address_of(index)?;
        let words = pressures_kpa.map(pressure_to_word);
        let tx = self.bus.transact(addr, words)?;
        self.last_commands[index] = words;
        Ok(tx)
    }

    /// Read the four chamber pressures (gauge kPa) of device `index`,
    /// re-sending its current commands.
    pub fn get_pressure_data(&mut self, index: usize) -> Result<[f64; PAYLOAD_WORDS], BusError> {
        let addr = self.address_of(index)?;
        let tx = self.bus.transact(addr, self.last_commands[index])?;
        Ok(tx.response.payload.map(word_to_pressure))
    }

    /// Commands currently held for device `index`, in gauge kPa.
    pub fn commands(&self, index: usize) -> Option<[f64; PAYLOAD_WORDS]> {
        self.last_commands.get(index).map(|w| w.map(word_to_pressure))
    }

    pub fn idle(&mut self, dt: f64) {
        self.bus.idle(dt);
    }

    pub fn into_devices(self) -> Vec<D> {
        self.bus.into_devices()
    }
}
