use std::fmt;

use super::CodecError;

/// The five SMBus transfer shapes used to carry PMBus commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Primitive {
    SendByte,
    WriteByte,
    WriteWord,
    ReadByte,
    ReadWord,
}

impl Primitive {
    pub const ALL: [Primitive; 5] = [
        Primitive::SendByte,
        Primitive::WriteByte,
        Primitive::WriteWord,
        Primitive::ReadByte,
        Primitive::ReadWord,
    ];

    /// Bytes on the wire, address bytes included.
    pub fn wire_bytes(self) -> u32 {
        match self {
            Primitive::SendByte => 2,
            Primitive::WriteByte => 3,
            Primitive::WriteWord => 4,
            Primitive::ReadByte => 4,
            Primitive::ReadWord => 5,
        }
    }

    /// Start, Stop and (for reads) the RepeatedStart.
    pub fn control_events(self) -> u32 {
        if self.is_read() {
            3
        } else {
            2
        }
    }

    pub fn is_read(self) -> bool {
        matches!(self, Primitive::ReadByte | Primitive::ReadWord)
    }

    /// Data bytes following the command byte (written or read).
    pub fn data_len(self) -> usize {
        match self {
            Primitive::SendByte => 0,
            Primitive::WriteByte | Primitive::ReadByte => 1,
            Primitive::WriteWord | Primitive::ReadWord => 2,
        }
    }

    /// Short mnemonic used by the golden-vector and trace files.
    pub fn mnemonic(self) -> &'static str {
        match self {
            Primitive::SendByte => "SB",
            Primitive::WriteByte => "WB",
            Primitive::WriteWord => "WW",
            Primitive::ReadByte => "RB",
            Primitive::ReadWord => "RW",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.mnemonic() == s)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

macro_rules! pmbus_commands {
    ($( $variant:ident = $code:literal, $name:literal, [$($prim:ident),*] );* $(;)?) => {
        /// The PMBus commands this engine understands.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum PmbusCommand {
            $( $variant = $code, )*
        }

        impl PmbusCommand {
            pub const ALL: &'static [PmbusCommand] = &[$( PmbusCommand::$variant, )*];

            pub fn code(self) -> u8 {
                self as u8
            }

            pub fn name(self) -> &'static str {
                match self {
                    $( PmbusCommand::$variant => $name, )*
                }
            }

            /// Transfer shapes the command may be carried by.
            pub fn primitives(self) -> &'static [Primitive] {
                match self {
                    $( PmbusCommand::$variant => &[$( Primitive::$prim ),*], )*
                }
            }
        }

        impl TryFrom<u8> for PmbusCommand {
            type Error = CodecError;

            fn try_from(code: u8) -> Result<Self, Self::Error> {
                match code {
                    $( $code => Ok(PmbusCommand::$variant), )*
                    other => Err(CodecError::UnknownCommand(other)),
                }
            }
        }
    };
}

pmbus_commands! {
    Page = 0x00, "PAGE", [WriteByte, ReadByte];
    ClearFaults = 0x03, "CLEAR_FAULTS", [SendByte];
    VoutCommand = 0x21, "VOUT_COMMAND", [WriteWord, ReadWord];
    VoutUvWarnLimit = 0x43, "VOUT_UV_WARN_LIMIT", [WriteWord, ReadWord];
    VoutUvFaultLimit = 0x44, "VOUT_UV_FAULT_LIMIT", [WriteWord, ReadWord];
    PowerGoodOn = 0x5E, "POWER_GOOD_ON", [WriteWord, ReadWord];
    PowerGoodOff = 0x5F, "POWER_GOOD_OFF", [WriteWord, ReadWord];
    ReadVout = 0x8B, "READ_VOUT", [ReadWord];
    ReadIout = 0x8C, "READ_IOUT", [ReadWord];
}

impl PmbusCommand {
    pub fn supports(self, primitive: Primitive) -> bool {
        self.primitives().contains(&primitive)
    }

    pub fn is_writable(self) -> bool {
        self.primitives().iter().any(|p| !p.is_read())
    }
}

impl fmt::Display for PmbusCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:02X}h)", self.name(), self.code())
    }
}
